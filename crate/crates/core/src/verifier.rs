//! Supervised training of the Siamese verifier on original depth maps.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnMode, Tape};
use crate::data::crop::{resample_nearest, CropBox};
use crate::data::normalize::{depth_batch, DepthRange};
use crate::data::pairs::VerificationPair;
use crate::data::{DepthMap, FaceSample};
use crate::error::{Error, Result};
use crate::nn::{Network, Siamese, WidthMultiplier};
use crate::optim::{adam_step, AdamConfig};
use crate::scalar::{cst, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierTrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    pub width_multiplier: f64,
    /// Input extent; depth maps of another size are rescaled
    /// (nearest-neighbor) to it.
    pub image_size: usize,
    /// Plain BCE on the similarity score. The only supported objective.
    pub bce_objective: bool,
}

impl Default for VerifierTrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 16,
            epochs: 20,
            seed: 0,
            width_multiplier: 1.0,
            image_size: 96,
            bce_objective: true,
        }
    }
}

impl VerifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("verifier lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("verifier betas must lie in [0, 1) and eps be positive".into());
        }
        if self.batch_size < 2 {
            return bad(format!("verifier batch_size must be >= 2, got {}", self.batch_size));
        }
        if !self.bce_objective {
            return bad("only the BCE verifier objective is implemented".into());
        }
        WidthMultiplier::new(self.width_multiplier)?;
        // surfaces the minimum-extent error before any compute
        Siamese::<f32>::new(WidthMultiplier::new(self.width_multiplier)?, self.image_size).map(|_| ())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Nearest-neighbor rescale of a whole depth map to `size × size`.
pub fn rescale_depth(map: &DepthMap, size: usize) -> DepthMap {
    if map.width() == size && map.height() == size {
        return map.clone();
    }
    let b = CropBox {
        x0: 0.0,
        y0: 0.0,
        x1: map.width() as f64,
        y1: map.height() as f64,
    };
    resample_nearest(map, &b, size)
}

/// Normalized `N×1×S×S` tensors for both sides of `pairs`.
pub fn pair_tensors<T: Scalar>(
    maps: &[&DepthMap],
    pairs: &[VerificationPair],
    size: usize,
    range: &DepthRange,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let side = |pick: fn(&VerificationPair) -> usize| -> Result<Tensor<T>> {
        let scaled: Vec<DepthMap> = pairs.iter().map(|p| rescale_depth(maps[pick(p)], size)).collect();
        let refs: Vec<&DepthMap> = scaled.iter().collect();
        depth_batch(&refs, range)
    };
    Ok((side(|p| p.a)?, side(|p| p.b)?))
}

/// Rejects any pair touching a test subject.
pub fn check_protocol(samples: &[FaceSample], pairs: &[VerificationPair], test_subjects: &BTreeSet<u32>) -> Result<()> {
    for p in pairs {
        for i in [p.a, p.b] {
            let s = samples
                .get(i)
                .ok_or_else(|| Error::Contract(format!("pair index {i} outside the sample list")))?;
            if test_subjects.contains(&s.subject_id) {
                return Err(Error::Contract(format!(
                    "verifier training pair uses test subject {} ({})",
                    s.subject_id,
                    s.key()
                )));
            }
        }
    }
    Ok(())
}

/// Balanced batch order for one epoch: same- and cross-subject pairs are
/// shuffled separately and interleaved, `min(#same, #cross)` of each.
pub fn balanced_order(pairs: &[VerificationPair], seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..pairs.len()).partition(|&i| pairs[i].same);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let k = pos.len().min(neg.len());
    pos.into_iter().take(k).zip(neg.into_iter().take(k)).flat_map(|(a, b)| [a, b]).collect()
}

/// Trains a verifier on original depth maps of training subjects only,
/// minimizing BCE between the similarity score and the same-subject label.
/// Returns the network and the mean training loss of every epoch.
pub fn train_verifier<T: Scalar>(
    samples: &[FaceSample],
    pairs: &[VerificationPair],
    test_subjects: &BTreeSet<u32>,
    range: &DepthRange,
    config: &VerifierTrainConfig,
) -> Result<(Siamese<T>, Vec<f64>)> {
    config.validate()?;
    check_protocol(samples, pairs, test_subjects)?;
    if !pairs.iter().any(|p| p.same) || pairs.iter().all(|p| p.same) {
        return Err(Error::Config("verifier training needs both same- and cross-subject pairs".into()));
    }
    let m = WidthMultiplier::new(config.width_multiplier)?;
    let mut net = Siamese::<T>::seeded(m, config.image_size, config.seed.wrapping_mul(2).wrapping_add(1))?;
    let mut opt = net.store().adam_state();
    let adam = config.adam();
    let maps: Vec<&DepthMap> = samples.iter().map(|s| &s.depth).collect();
    let mut losses = Vec::with_capacity(config.epochs as usize);
    for epoch in 0..config.epochs {
        let order = balanced_order(pairs, config.seed, epoch);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(config.batch_size).filter(|c| c.len() >= 2) {
            let batch: Vec<VerificationPair> = chunk.iter().map(|&i| pairs[i]).collect();
            let (a, b) = pair_tensors::<T>(&maps, &batch, config.image_size, range)?;
            let labels: Vec<T> = batch.iter().map(|p| cst(if p.same { 1.0 } else { 0.0 })).collect();
            let mut tape = Tape::new();
            let bound = net.store().bind(&mut tape, true);
            let av = tape.constant(a);
            let bv = tape.constant(b);
            let z = net.forward_logits(&mut tape, &bound, av, bv, BnMode::Train)?;
            let loss = tape.bce_with_logits(z, &labels)?;
            let value = tape.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("verifier loss = {value} in epoch {}", epoch + 1)));
            }
            tape.backward(loss)?;
            let grads = net.store().grads(&tape, &bound);
            adam_step(&mut net.store_mut().tensors_mut(), &grads, &mut opt, &adam)?;
            sum += value;
            count += 1;
        }
        losses.push(if count == 0 { f64::NAN } else { sum / count as f64 });
    }
    Ok((net, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pairs::build_pair_set;

    #[test]
    fn rescale_is_identity_at_same_size() {
        let m = DepthMap::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(rescale_depth(&m, 2), m);
        let up = rescale_depth(&m, 4);
        assert_eq!(up.pixels(), &[1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
    }

    #[test]
    fn balanced_order_alternates() {
        let samples = crate::data::synth::synth_face_dataset(3, 6, 16, 0).unwrap();
        let pairs = build_pair_set(&samples, 30, 0.3, 1).unwrap();
        let order = balanced_order(&pairs, 0, 0);
        assert_eq!(order.len(), 18);
        for (k, &i) in order.iter().enumerate() {
            assert_eq!(pairs[i].same, k % 2 == 0);
        }
    }

    #[test]
    fn test_subject_pairs_are_rejected() {
        let samples = crate::data::synth::synth_face_dataset(3, 4, 16, 0).unwrap();
        let pairs = build_pair_set(&samples, 10, 0.5, 1).unwrap();
        let tests: BTreeSet<u32> = [2].into();
        let cfg = VerifierTrainConfig {
            width_multiplier: 0.0625,
            image_size: 64,
            ..VerifierTrainConfig::default()
        };
        let r = train_verifier::<f32>(&samples, &pairs, &tests, &DepthRange::default(), &cfg);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
