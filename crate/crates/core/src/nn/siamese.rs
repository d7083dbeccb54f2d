use crate::autodiff::{BnMode, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{
    check_input, run_layers, Activation, Bound, ConvSpec, Layer, LayerShape, ModelKind, Network, ParamStore,
    WidthMultiplier,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const TOWER_CHANNELS: [usize; 5] = [64, 128, 256, 256, 256];
const HEAD_UNITS: [usize; 2] = [128, 32];

/// Spatial extent after the five stride-2 k3 p1 tower convolutions.
fn tower_extent(size: usize) -> usize {
    (0..TOWER_CHANNELS.len()).fold(size, |s, _| s.div_ceil(2))
}

/// Twin-tower verifier scoring whether two depth maps show the same face.
///
/// Each input runs through the same five k3 s2 conv blocks (batch norm +
/// ReLU) and a k2 s2 average pool; the two embeddings are fused by
/// element-wise absolute difference and scored by fc128 → fc32 → fc1 with
/// ReLU in between and a sigmoid at the end. The fusion makes the score
/// exactly symmetric in its arguments.
#[derive(Debug, Clone)]
pub struct Siamese<T> {
    store: ParamStore<T>,
    tower: Vec<Layer>,
    head: Vec<Layer>,
    multiplier: WidthMultiplier,
    image_size: usize,
    embedding: usize,
}

impl<T: Scalar> Siamese<T> {
    pub fn new(multiplier: WidthMultiplier, image_size: usize) -> Result<Self> {
        let side = tower_extent(image_size);
        if side < 2 {
            return Err(Error::Config(format!(
                "verifier input extent {image_size} leaves nothing after pooling (need at least 33)"
            )));
        }
        let pooled = (side - 2) / 2 + 1;
        let mut store = ParamStore::new();
        let mut tower = Vec::new();
        let mut in_ch = 1;
        for (i, &base) in TOWER_CHANNELS.iter().enumerate() {
            let out_ch = multiplier.channels(base);
            tower.push(store.conv(ConvSpec {
                name: &format!("tower{}", i + 1),
                in_ch,
                out_ch,
                kernel: 3,
                stride: 2,
                padding: 1,
                transpose: false,
                output_padding: 0,
                norm: true,
                act: Activation::Relu,
            }));
            in_ch = out_ch;
        }
        tower.push(Layer::AvgPool { kernel: 2, stride: 2 });
        tower.push(Layer::Flatten);
        let embedding = in_ch * pooled * pooled;

        let mut head = Vec::new();
        let mut fan_in = embedding;
        for &units in &HEAD_UNITS {
            head.push(store.dense(&format!("fc{units}"), fan_in, units, Activation::Relu));
            fan_in = units;
        }
        head.push(store.dense("fc1", fan_in, 1, Activation::Identity));
        Ok(Self {
            store,
            tower,
            head,
            multiplier,
            image_size,
            embedding,
        })
    }

    pub fn seeded(multiplier: WidthMultiplier, image_size: usize, seed: u64) -> Result<Self> {
        let mut s = Self::new(multiplier, image_size)?;
        s.init_weights(seed);
        Ok(s)
    }

    /// Length of the pooled per-branch embedding.
    pub fn embedding_len(&self) -> usize {
        self.embedding
    }

    pub fn embed(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: BnMode) -> Result<Var> {
        check_input("siamese_forward", tape.value(x), self.image_size)?;
        run_layers(&self.tower, &mut self.store, tape, bound, x, mode, None)
    }

    /// Pre-sigmoid similarity logits, `N×1`.
    pub fn forward_logits(&mut self, tape: &mut Tape<T>, bound: &Bound, a: Var, b: Var, mode: BnMode) -> Result<Var> {
        if tape.value(a).shape() != tape.value(b).shape() {
            return Err(Error::shape(
                "siamese_forward",
                format!("{:?} vs {:?}", tape.value(a).shape(), tape.value(b).shape()),
            ));
        }
        let ea = self.embed(tape, bound, a, mode)?;
        let eb = self.embed(tape, bound, b, mode)?;
        let fused = tape.abs_diff(ea, eb)?;
        run_layers(&self.head, &mut self.store, tape, bound, fused, mode, None)
    }

    /// Similarity score in `(0, 1)` per pair, `N×1`.
    pub fn forward(&mut self, tape: &mut Tape<T>, bound: &Bound, a: Var, b: Var, mode: BnMode) -> Result<Var> {
        let z = self.forward_logits(tape, bound, a, b, mode)?;
        Ok(tape.sigmoid(z))
    }

    /// Tower shapes for one branch.
    pub fn tower_traced(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: BnMode) -> Result<Vec<LayerShape>> {
        check_input("siamese_forward", tape.value(x), self.image_size)?;
        let mut trace = Vec::new();
        run_layers(&self.tower, &mut self.store, tape, bound, x, mode, Some(&mut trace))?;
        Ok(trace)
    }

    /// Scores detached batches with running statistics; never mutates the
    /// network.
    pub fn score(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let av = tape.constant(a.detached());
        let bv = tape.constant(b.detached());
        let y = self.forward(&mut tape, &bound, av, bv, BnMode::Eval)?;
        Ok(tape.value(y).detached())
    }
}

impl<T: Scalar> Network<T> for Siamese<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Siamese
    }
    fn multiplier(&self) -> WidthMultiplier {
        self.multiplier
    }
    fn image_size(&self) -> usize {
        self.image_size
    }
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tower_extent_follows_ceil_halving() {
        assert_eq!(tower_extent(96), 3);
        assert_eq!(tower_extent(64), 2);
        assert_eq!(tower_extent(32), 1);
        assert!(Siamese::<f32>::new(WidthMultiplier::FULL, 32).is_err());
    }

    #[test]
    fn mismatched_pair_shapes_are_rejected() {
        let mut s = Siamese::<f32>::seeded(WidthMultiplier::new(0.0625).unwrap(), 64, 0).unwrap();
        let r = s.score(&Tensor::zeros(&[2, 1, 64, 64]), &Tensor::zeros(&[3, 1, 64, 64]));
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
