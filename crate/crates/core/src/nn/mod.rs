//! Parameter storage, layer building blocks and the three networks.

mod discriminator;
mod generator;
mod siamese;

pub use discriminator::Discriminator;
pub use generator::Generator;
pub use siamese::Siamese;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::autodiff::{BnConfig, BnMode, RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Negative slope of every LeakyReLU in the encoder and discriminator.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Uniform channel scaling for desk-scale variants; `1` is the full-size
/// architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthMultiplier(f64);

impl WidthMultiplier {
    pub const ALLOWED: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0625];
    pub const FULL: WidthMultiplier = WidthMultiplier(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if Self::ALLOWED.contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Config(format!(
                "width multiplier {value} not in {{1, 1/2, 1/4, 1/8, 1/16}}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Scaled channel count, never below 4.
    pub fn channels(self, base: usize) -> usize {
        ((base as f64 * self.0).round() as usize).max(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Generator,
    Discriminator,
    Siamese,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Generator => 0,
            ModelKind::Discriminator => 1,
            ModelKind::Siamese => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Generator),
            1 => Some(ModelKind::Discriminator),
            2 => Some(ModelKind::Siamese),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Generator => "generator",
            ModelKind::Discriminator => "discriminator",
            ModelKind::Siamese => "siamese",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormBuffers<T> {
    pub name: String,
    pub stats: RunningStats<T>,
}

/// Ordered trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub params: Vec<Param<T>>,
    pub norms: Vec<NormBuffers<T>>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Handles in store order, e.g. leaves recorded by hand for a
    /// gradient check.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl<T: Scalar> ParamStore<T> {
    fn new() -> Self {
        Self {
            params: Vec::new(),
            norms: Vec::new(),
        }
    }

    fn push(&mut self, name: String, role: ParamRole, shape: &[usize]) -> usize {
        let value = match role {
            ParamRole::NormScale => Tensor::ones(shape),
            _ => Tensor::zeros(shape),
        };
        self.params.push(Param { name, role, value });
        self.params.len() - 1
    }

    /// Records every parameter on `tape`; frozen parameters receive no
    /// gradient.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound(self.params.iter().map(|p| tape.param(&p.value, trainable)).collect())
    }

    /// Gradients of a bound store after `tape.backward`, zero-filled for
    /// parameters the loss does not reach.
    pub fn grads(&self, tape: &Tape<T>, bound: &Bound) -> Vec<Vec<T>> {
        self.params
            .iter()
            .zip(&bound.0)
            .map(|(p, &v)| {
                tape.grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); p.value.numel()])
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params.iter_mut().map(|p| &mut p.value).collect()
    }

    pub fn adam_state(&self) -> AdamState<T> {
        AdamState::for_params(self.params.iter().map(|p| &p.value))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Gaussian initialization, reproducible per seed: weights
    /// `N(0, 0.02)`, norm scales `N(1, 0.02)`, biases and shifts zero,
    /// running statistics reset.
    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for p in &mut self.params {
            let offset = match p.role {
                ParamRole::Weight => Some(0.0),
                ParamRole::NormScale => Some(1.0),
                ParamRole::Bias | ParamRole::NormShift => None,
            };
            for v in p.value.data_mut() {
                *v = match offset {
                    Some(o) => T::from_f64_lossy(o + normal.sample(&mut rng)),
                    None => T::zero(),
                };
            }
        }
        for n in &mut self.norms {
            let c = n.stats.mean.len();
            n.stats = RunningStats::new(c);
        }
    }

    /// Every persistent tensor (parameters, then running statistics) by name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> =
            self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for n in &self.norms {
            let c = n.stats.mean.len();
            out.push((
                format!("{}.running_mean", n.name),
                Tensor::new(&[c], n.stats.mean.clone()).expect("channel vector"),
            ));
            out.push((
                format!("{}.running_var", n.name),
                Tensor::new(&[c], n.stats.var.clone()).expect("channel vector"),
            ));
        }
        out
    }

    /// Restores tensors produced by [`ParamStore::named_tensors`]; names
    /// and shapes must match exactly.
    pub fn load_named(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let expected = self.named_tensors();
        if expected.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, want), (got_name, got)) in expected.iter().zip(tensors) {
            if name != got_name || want.shape() != got.shape() {
                return Err(Error::Config(format!(
                    "tensor {got_name} {:?} does not match {name} {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        let mut it = tensors.iter();
        for p in &mut self.params {
            p.value = it.next().expect("length checked").1.detached();
        }
        for n in &mut self.norms {
            n.stats.mean = it.next().expect("length checked").1.data().to_vec();
            n.stats.var = it.next().expect("length checked").1.data().to_vec();
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and values of every persistent tensor.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.named_tensors() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Relu,
    Tanh,
    Identity,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub name: String,
    pub transpose: bool,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub weight: usize,
    pub bias: usize,
    /// `(norm buffer index, gamma index, beta index)`
    pub norm: Option<(usize, usize, usize)>,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub(crate) struct DenseLayer {
    pub name: String,
    pub weight: usize,
    pub bias: usize,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Conv(ConvLayer),
    AvgPool { kernel: usize, stride: usize },
    Flatten,
    Dense(DenseLayer),
}

impl Layer {
    fn label(&self) -> String {
        match self {
            Layer::Conv(c) => c.name.clone(),
            Layer::AvgPool { .. } => "avgpool".into(),
            Layer::Flatten => "flatten".into(),
            Layer::Dense(d) => d.name.clone(),
        }
    }
}

/// Output shape of one layer, recorded during a traced forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub layer: String,
    pub shape: Vec<usize>,
}

pub(crate) struct ConvSpec<'a> {
    pub name: &'a str,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub transpose: bool,
    pub output_padding: usize,
    pub norm: bool,
    pub act: Activation,
}

impl<T: Scalar> ParamStore<T> {
    pub(crate) fn conv(&mut self, spec: ConvSpec<'_>) -> Layer {
        let k = spec.kernel;
        let wshape = if spec.transpose {
            [spec.in_ch, spec.out_ch, k, k]
        } else {
            [spec.out_ch, spec.in_ch, k, k]
        };
        let weight = self.push(format!("{}.weight", spec.name), ParamRole::Weight, &wshape);
        let bias = self.push(format!("{}.bias", spec.name), ParamRole::Bias, &[spec.out_ch]);
        let norm = spec.norm.then(|| {
            let g = self.push(format!("{}.bn.gamma", spec.name), ParamRole::NormScale, &[spec.out_ch]);
            let b = self.push(format!("{}.bn.beta", spec.name), ParamRole::NormShift, &[spec.out_ch]);
            self.norms.push(NormBuffers {
                name: format!("{}.bn", spec.name),
                stats: RunningStats::new(spec.out_ch),
            });
            (self.norms.len() - 1, g, b)
        });
        Layer::Conv(ConvLayer {
            name: spec.name.to_string(),
            transpose: spec.transpose,
            stride: spec.stride,
            padding: spec.padding,
            output_padding: spec.output_padding,
            weight,
            bias,
            norm,
            act: spec.act,
        })
    }

    pub(crate) fn dense(&mut self, name: &str, fan_in: usize, units: usize, act: Activation) -> Layer {
        let weight = self.push(format!("{name}.weight"), ParamRole::Weight, &[fan_in, units]);
        let bias = self.push(format!("{name}.bias"), ParamRole::Bias, &[units]);
        Layer::Dense(DenseLayer {
            name: name.to_string(),
            weight,
            bias,
            act,
        })
    }
}

fn activate<T: Scalar>(tape: &mut Tape<T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Identity => x,
    }
}

/// Runs `layers` in order on `x`, appending output shapes to `trace`.
pub(crate) fn run_layers<T: Scalar>(
    layers: &[Layer],
    store: &mut ParamStore<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    mut x: Var,
    mode: BnMode,
    mut trace: Option<&mut Vec<LayerShape>>,
) -> Result<Var> {
    let p = bound.vars();
    for layer in layers {
        x = match layer {
            Layer::Conv(c) => {
                let y = if c.transpose {
                    tape.conv_transpose2d(x, p[c.weight], p[c.bias], c.stride, c.padding, c.output_padding)?
                } else {
                    tape.conv2d(x, p[c.weight], p[c.bias], c.stride, c.padding)?
                };
                let y = match c.norm {
                    Some((buf, g, b)) => {
                        let stats = &mut store.norms[buf].stats;
                        tape.batch_norm2d(y, p[g], p[b], stats, mode, BnConfig::default())?
                    }
                    None => y,
                };
                activate(tape, y, c.act)
            }
            Layer::AvgPool { kernel, stride } => tape.avg_pool2d(x, *kernel, *stride)?,
            Layer::Flatten => tape.flatten(x)?,
            Layer::Dense(d) => {
                let y = tape.fully_connected(x, p[d.weight], p[d.bias])?;
                activate(tape, y, d.act)
            }
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(LayerShape {
                layer: layer.label(),
                shape: tape.value(x).shape().to_vec(),
            });
        }
    }
    Ok(x)
}

/// Shared surface of the three networks.
pub trait Network<T: Scalar> {
    fn kind(&self) -> ModelKind;
    fn multiplier(&self) -> WidthMultiplier;
    fn image_size(&self) -> usize;
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;

    /// Reinitializes every parameter from `seed`.
    fn init_weights(&mut self, seed: u64) {
        self.store_mut().init(seed);
    }

    fn param_hash(&self) -> [u8; 32] {
        self.store().hash()
    }
}

/// Encoder channel plan shared by the generator and the discriminator.
pub(crate) const ENCODER_CHANNELS: [usize; 4] = [128, 256, 512, 1024];
pub(crate) const ENCODER_KERNEL: usize = 5;

pub(crate) fn encoder_layers<T: Scalar>(store: &mut ParamStore<T>, m: WidthMultiplier, prefix: &str) -> (Vec<Layer>, usize) {
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for (i, &base) in ENCODER_CHANNELS.iter().enumerate() {
        let out_ch = m.channels(base);
        layers.push(store.conv(ConvSpec {
            name: &format!("{prefix}{}", i + 1),
            in_ch,
            out_ch,
            kernel: ENCODER_KERNEL,
            stride: 2,
            padding: 2,
            transpose: false,
            output_padding: 0,
            norm: true,
            act: Activation::LeakyRelu,
        }));
        in_ch = out_ch;
    }
    (layers, in_ch)
}

/// Validates a square single-channel image batch of extent `size`.
pub(crate) fn check_input<T: Scalar>(op: &'static str, x: &Tensor<T>, size: usize) -> Result<usize> {
    let (n, c, h, w) = x.dims4(op)?;
    if c != 1 {
        return Err(Error::shape(op, format!("expected 1 channel, got {c}")));
    }
    if h != size || w != size {
        return Err(Error::shape(
            op,
            format!("expected {size}x{size} input, got {h}x{w}"),
        ));
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplier_rounds_and_floors_channels() {
        let m = WidthMultiplier::new(0.0625).unwrap();
        assert_eq!(m.channels(64), 4);
        assert_eq!(m.channels(1024), 64);
        assert_eq!(WidthMultiplier::FULL.channels(256), 256);
        assert!(WidthMultiplier::new(0.3).is_err());
    }

    #[test]
    fn model_kind_tags_round_trip() {
        for k in [ModelKind::Generator, ModelKind::Discriminator, ModelKind::Siamese] {
            assert_eq!(ModelKind::from_tag(k.tag()), Some(k));
        }
        assert_eq!(ModelKind::from_tag(9), None);
    }
}
