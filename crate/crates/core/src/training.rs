//! Adversarial training of the generator against the discriminator.
//!
//! Per batch: one generator forward pass, one discriminator update on the
//! detached fake, then one generator update on `λ·MSE + BCE(D(G(x)), 1)`
//! with the discriminator frozen (batch statistics, no running-stat or
//! weight change).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnMode, Tape, Var};
use crate::data::normalize::{depth_batch, gray_batch, DepthRange};
use crate::data::FaceSample;
use crate::error::{Error, Result};
use crate::nn::{Bound, Discriminator, Generator, Network, WidthMultiplier};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::{cst, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the reconstruction term.
    pub lambda_mse: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    pub width_multiplier: f64,
    pub image_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            lambda_mse: 100.0,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            width_multiplier: 1.0,
            image_size: 96,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.lambda_mse >= 0.0 && self.lambda_mse.is_finite()) {
            return bad(format!("lambda_mse must be >= 0, got {}", self.lambda_mse));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return bad(format!("image_size {} must be a positive multiple of 16", self.image_size));
        }
        WidthMultiplier::new(self.width_multiplier)?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn multiplier(&self) -> Result<WidthMultiplier> {
        WidthMultiplier::new(self.width_multiplier)
    }
}

/// Normalized gray/depth pairs held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSet<T> {
    size: usize,
    gray: Vec<Vec<T>>,
    depth: Vec<Vec<T>>,
}

impl<T: Scalar> PairedSet<T> {
    pub fn from_samples(samples: &[&FaceSample], range: &DepthRange) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("empty training set".into()))?;
        let size = first.gray.width();
        let mut set = Self {
            size,
            gray: Vec::with_capacity(samples.len()),
            depth: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            s.validate()?;
            if s.gray.width() != size || s.gray.height() != size {
                return Err(Error::shape(
                    "paired_set",
                    format!("expected {size}x{size} samples, {} is {}x{}", s.key(), s.gray.width(), s.gray.height()),
                ));
            }
            set.gray.push(gray_batch::<T>(&[&s.gray])?.into_data());
            set.depth.push(depth_batch::<T>(&[&s.depth], range)?.into_data());
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.gray.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gray.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.size
    }

    fn gather(&self, src: &[Vec<T>], idx: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(idx.len() * self.size * self.size);
        for &i in idx {
            data.extend_from_slice(&src[i]);
        }
        Tensor::new(&[idx.len(), 1, self.size, self.size], data).expect("uniform sizes")
    }

    /// `(gray, depth)` batches for the given items.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<T>, Tensor<T>) {
        (self.gather(&self.gray, idx), self.gather(&self.depth, idx))
    }

    pub fn depth(&self, i: usize) -> &[T] {
        &self.depth[i]
    }
}

/// Scalar loss values of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub d_loss: f64,
    pub g_adv_loss: f64,
    pub g_mse_loss: f64,
}

/// Per-epoch mean losses, one row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: u64,
    pub step: u64,
    pub d_loss: f64,
    pub g_adv_loss: f64,
    pub g_mse_loss: f64,
    pub wall_ms: u64,
}

/// Everything needed to continue training.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub g_opt: AdamState<T>,
    pub d_opt: AdamState<T>,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed batches.
    pub step: u64,
    pub history: Vec<EpochLosses>,
}

/// Seeds of the two networks derived from the run seed.
pub fn network_seeds(seed: u64) -> (u64, u64) {
    (seed.wrapping_mul(2).wrapping_add(1), seed.wrapping_mul(2).wrapping_add(2))
}

impl<T: Scalar> TrainState<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let m = config.multiplier()?;
        let (gs, ds) = network_seeds(config.seed);
        let generator = Generator::seeded(m, config.image_size, gs)?;
        let discriminator = Discriminator::seeded(m, config.image_size, ds)?;
        Ok(Self {
            g_opt: generator.store().adam_state(),
            d_opt: discriminator.store().adam_state(),
            generator,
            discriminator,
            epoch: 0,
            step: 0,
            history: Vec::new(),
        })
    }
}

fn targets<T: Scalar>(n: usize, v: f64) -> Vec<T> {
    vec![cst(v); n]
}

/// Tape handles of the generator objective.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub total: Var,
    pub mse: Var,
    pub adv: Var,
}

/// `λ·MSE(fake, real) + BCE(D(fake), 1)` with `D` frozen: its parameters
/// are bound without gradients and its batch norm runs on batch
/// statistics without touching the running averages.
pub fn generator_loss<T: Scalar>(
    tape: &mut Tape<T>,
    fake: Var,
    real: Var,
    discriminator: &mut Discriminator<T>,
    d_bound: &Bound,
    lambda_mse: f64,
) -> Result<GeneratorLoss> {
    let n = tape.value(fake).shape()[0];
    let mse = tape.mse(fake, real)?;
    let z = discriminator.forward_logits(tape, d_bound, fake, BnMode::TrainFrozen)?;
    let adv = tape.bce_with_logits(z, &targets(n, 1.0))?;
    let weighted = tape.scale(mse, lambda_mse);
    let total = tape.add(weighted, adv)?;
    Ok(GeneratorLoss { total, mse, adv })
}

fn check_finite(what: &str, v: f64, state_epoch: u64, state_step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!(
            "{what} = {v} at epoch {} step {}; aborting",
            state_epoch + 1,
            state_step + 1
        )))
    }
}

/// One discriminator update on a real batch and a detached fake batch:
/// mean of `BCE(D(real), 1)` and `BCE(D(fake), 0)`. Returns the loss.
pub fn discriminator_step<T: Scalar>(
    discriminator: &mut Discriminator<T>,
    opt: &mut AdamState<T>,
    adam: &AdamConfig,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<f64> {
    let n = real.shape()[0];
    let mut tape = Tape::new();
    let bound = discriminator.store().bind(&mut tape, true);
    let rv = tape.constant(real.detached());
    let fv = tape.constant(fake.detached());
    let zr = discriminator.forward_logits(&mut tape, &bound, rv, BnMode::Train)?;
    let lr = tape.bce_with_logits(zr, &targets(n, 1.0))?;
    let zf = discriminator.forward_logits(&mut tape, &bound, fv, BnMode::Train)?;
    let lf = tape.bce_with_logits(zf, &targets(n, 0.0))?;
    let sum = tape.add(lr, lf)?;
    let loss = tape.scale(sum, 0.5);
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("discriminator loss = {value}")));
    }
    tape.backward(loss)?;
    let grads = discriminator.store().grads(&tape, &bound);
    adam_step(&mut discriminator.store_mut().tensors_mut(), &grads, opt, adam)?;
    Ok(value)
}

/// Stage of a training step, reported to a [`StepObserver`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    BeforeDiscriminator,
    AfterDiscriminator,
    BeforeGenerator,
    AfterGenerator,
}

/// Hook called around each update of [`train_epoch_observed`].
pub trait StepObserver<T> {
    fn observe(&mut self, phase: Phase, state: &TrainState<T>);
}

impl<T, F: FnMut(Phase, &TrainState<T>)> StepObserver<T> for F {
    fn observe(&mut self, phase: Phase, state: &TrainState<T>) {
        self(phase, state)
    }
}

/// One D-then-G update on a batch.
pub fn train_batch<T: Scalar>(
    state: &mut TrainState<T>,
    config: &TrainConfig,
    gray: &Tensor<T>,
    depth: &Tensor<T>,
    observer: &mut dyn StepObserver<T>,
) -> Result<LossValues> {
    let adam = config.adam();
    let mut tape = Tape::new();
    let g_bound = state.generator.store().bind(&mut tape, true);
    let gv = tape.constant(gray.detached());
    let fake = state.generator.forward(&mut tape, &g_bound, gv, BnMode::Train)?;
    let fake_value = tape.value(fake).detached();

    observer.observe(Phase::BeforeDiscriminator, state);
    let d_loss = discriminator_step(&mut state.discriminator, &mut state.d_opt, &adam, depth, &fake_value)
        .map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {} step {}", state.epoch + 1, state.step + 1)),
            other => other,
        })?;
    observer.observe(Phase::AfterDiscriminator, state);

    observer.observe(Phase::BeforeGenerator, state);
    let d_bound = state.discriminator.store().bind(&mut tape, false);
    let real = tape.constant(depth.detached());
    let loss = generator_loss(&mut tape, fake, real, &mut state.discriminator, &d_bound, config.lambda_mse)?;
    let values = LossValues {
        d_loss,
        g_adv_loss: check_finite("generator adversarial loss", tape.value(loss.adv).data()[0].as_f64(), state.epoch, state.step)?,
        g_mse_loss: check_finite("generator mse loss", tape.value(loss.mse).data()[0].as_f64(), state.epoch, state.step)?,
    };
    check_finite("generator loss", tape.value(loss.total).data()[0].as_f64(), state.epoch, state.step)?;
    tape.backward(loss.total)?;
    let grads = state.generator.store().grads(&tape, &g_bound);
    adam_step(&mut state.generator.store_mut().tensors_mut(), &grads, &mut state.g_opt, &adam)?;
    observer.observe(Phase::AfterGenerator, state);
    state.step += 1;
    Ok(values)
}

/// Item order of epoch `epoch` (0-based): a permutation seeded by
/// `(seed, epoch)`, so resuming needs no generator state.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Batches of one epoch; a trailing single item is dropped because batch
/// statistics need at least two.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    epoch_order(n, seed, epoch)
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

pub fn train_epoch<T: Scalar>(state: &mut TrainState<T>, data: &PairedSet<T>, config: &TrainConfig) -> Result<EpochLosses> {
    train_epoch_observed(state, data, config, &mut |_: Phase, _: &TrainState<T>| {})
}

pub fn train_epoch_observed<T: Scalar>(
    state: &mut TrainState<T>,
    data: &PairedSet<T>,
    config: &TrainConfig,
    observer: &mut dyn StepObserver<T>,
) -> Result<EpochLosses> {
    if data.len() < 2 {
        return Err(Error::Config(format!("training set needs at least 2 samples, has {}", data.len())));
    }
    if data.image_size() != config.image_size {
        return Err(Error::Config(format!(
            "data is {0}x{0} but image_size is {1}",
            data.image_size(),
            config.image_size
        )));
    }
    let started = Instant::now();
    let batches = epoch_batches(data.len(), config.batch_size, config.seed, state.epoch);
    let mut sums = LossValues::default();
    for idx in &batches {
        let (gray, depth) = data.batch(idx);
        let v = train_batch(state, config, &gray, &depth, observer)?;
        sums.d_loss += v.d_loss;
        sums.g_adv_loss += v.g_adv_loss;
        sums.g_mse_loss += v.g_mse_loss;
    }
    let k = batches.len() as f64;
    state.epoch += 1;
    let row = EpochLosses {
        epoch: state.epoch,
        step: state.step,
        d_loss: sums.d_loss / k,
        g_adv_loss: sums.g_adv_loss / k,
        g_mse_loss: sums.g_mse_loss / k,
        wall_ms: started.elapsed().as_millis() as u64,
    };
    state.history.push(row);
    Ok(row)
}

/// Mean per-image squared error `Σ‖pred − target‖²` over a set, in the
/// normalized value space, with the generator in evaluation mode.
pub fn generator_mse<T: Scalar>(generator: &mut Generator<T>, data: &PairedSet<T>, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (gray, depth) = data.batch(chunk);
        let pred = generator.predict(&gray)?;
        total += squared_error(pred.data(), depth.data());
    }
    Ok(total / data.len() as f64)
}

fn squared_error<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum()
}

/// Per-pixel mean depth map of a set: the best prediction that ignores
/// its input.
pub fn mean_depth_map<T: Scalar>(data: &PairedSet<T>) -> Vec<f64> {
    let px = data.image_size() * data.image_size();
    let mut mean = vec![0.0; px];
    for i in 0..data.len() {
        for (m, v) in mean.iter_mut().zip(data.depth(i)) {
            *m += v.as_f64();
        }
    }
    let n = data.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Mean per-image squared error of a constant prediction.
pub fn constant_mse<T: Scalar>(prediction: &[f64], data: &PairedSet<T>) -> f64 {
    let total: f64 = (0..data.len())
        .map(|i| prediction.iter().zip(data.depth(i)).map(|(p, v)| (p - v.as_f64()).powi(2)).sum::<f64>())
        .sum();
    total / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 1,
            seed: 3,
            width_multiplier: 0.0625,
            image_size: 16,
            ..TrainConfig::default()
        }
    }

    fn toy_data(n: usize) -> PairedSet<f64> {
        let samples = crate::data::synth::synth_face_dataset(1, n as u32, 16, 1).unwrap();
        let refs: Vec<&FaceSample> = samples.iter().collect();
        PairedSet::from_samples(&refs, &DepthRange::default()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { lambda_mse: -1.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 1, ..TrainConfig::default() },
            TrainConfig { image_size: 40, ..TrainConfig::default() },
            TrainConfig { width_multiplier: 0.3, ..TrainConfig::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn batches_cover_each_item_once() {
        let b = epoch_batches(10, 4, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(epoch_batches(9, 4, 1, 0).len(), 2);
        assert_ne!(epoch_order(10, 1, 0), epoch_order(10, 1, 1));
    }

    #[test]
    fn epoch_advances_counters() {
        let cfg = toy_config();
        let data = toy_data(12);
        let mut state = TrainState::<f64>::new(&cfg).unwrap();
        let row = train_epoch(&mut state, &data, &cfg).unwrap();
        assert_eq!((row.epoch, row.step), (1, 3));
        assert_eq!((state.g_opt.step, state.d_opt.step), (3, 3));
        assert!(row.d_loss.is_finite() && row.g_mse_loss.is_finite());
    }

    #[test]
    fn lambda_zero_is_pure_adversarial() {
        let cfg = toy_config();
        let mut state = TrainState::<f64>::new(&cfg).unwrap();
        let data = toy_data(4);
        let (gray, depth) = data.batch(&[0, 1, 2, 3]);
        let mut tape = Tape::new();
        let gb = state.generator.store().bind(&mut tape, true);
        let db = state.discriminator.store().bind(&mut tape, false);
        let g = tape.constant(gray);
        let fake = state.generator.forward(&mut tape, &gb, g, BnMode::Train).unwrap();
        let real = tape.constant(depth);
        let l = generator_loss(&mut tape, fake, real, &mut state.discriminator, &db, 0.0).unwrap();
        assert_eq!(tape.value(l.total).data()[0], tape.value(l.adv).data()[0]);
    }

    #[test]
    fn mean_map_beats_any_other_constant() {
        let data = toy_data(6);
        let mean = mean_depth_map(&data);
        let base = constant_mse(&mean, &data);
        let shifted: Vec<f64> = mean.iter().map(|v| v + 0.01).collect();
        assert!(constant_mse(&shifted, &data) > base);
    }
}
