use crate::autodiff::{BnMode, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{
    check_input, encoder_layers, run_layers, Activation, Bound, Layer, LayerShape, ModelKind, Network, ParamStore,
    WidthMultiplier,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Depth-map critic: the generator's encoder architecture, flattened into a
/// single fully connected unit. [`Discriminator::forward`] yields the
/// probability that the input is a real depth map.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    store: ParamStore<T>,
    layers: Vec<Layer>,
    multiplier: WidthMultiplier,
    image_size: usize,
    fc_inputs: usize,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(multiplier: WidthMultiplier, image_size: usize) -> Result<Self> {
        if image_size == 0 || image_size % 16 != 0 {
            return Err(Error::Config(format!(
                "discriminator input extent {image_size} must be a positive multiple of 16"
            )));
        }
        let mut store = ParamStore::new();
        let (mut layers, channels) = encoder_layers(&mut store, multiplier, "enc");
        let side = image_size / 16;
        let fc_inputs = channels * side * side;
        layers.push(Layer::Flatten);
        layers.push(store.dense("fc1", fc_inputs, 1, Activation::Identity));
        Ok(Self {
            store,
            layers,
            multiplier,
            image_size,
            fc_inputs,
        })
    }

    pub fn seeded(multiplier: WidthMultiplier, image_size: usize, seed: u64) -> Result<Self> {
        let mut d = Self::new(multiplier, image_size)?;
        d.init_weights(seed);
        Ok(d)
    }

    /// Width of the flattened encoder output feeding the final unit.
    pub fn fc_inputs(&self) -> usize {
        self.fc_inputs
    }

    /// Pre-sigmoid scores, `N×1`.
    pub fn forward_logits(&mut self, tape: &mut Tape<T>, bound: &Bound, depth: Var, mode: BnMode) -> Result<Var> {
        check_input("discriminator_forward", tape.value(depth), self.image_size)?;
        run_layers(&self.layers, &mut self.store, tape, bound, depth, mode, None)
    }

    /// Probability of "real", `N×1`, in `(0, 1)`.
    pub fn forward(&mut self, tape: &mut Tape<T>, bound: &Bound, depth: Var, mode: BnMode) -> Result<Var> {
        let z = self.forward_logits(tape, bound, depth, mode)?;
        Ok(tape.sigmoid(z))
    }

    pub fn forward_traced(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        depth: Var,
        mode: BnMode,
    ) -> Result<(Var, Vec<LayerShape>)> {
        check_input("discriminator_forward", tape.value(depth), self.image_size)?;
        let mut trace = Vec::new();
        let z = run_layers(&self.layers, &mut self.store, tape, bound, depth, mode, Some(&mut trace))?;
        Ok((tape.sigmoid(z), trace))
    }

    /// Probabilities for a detached batch using running statistics.
    pub fn predict(&mut self, depth: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let x = tape.constant(depth.detached());
        let y = self.forward(&mut tape, &bound, x, BnMode::Eval)?;
        Ok(tape.value(y).detached())
    }
}

impl<T: Scalar> Network<T> for Discriminator<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Discriminator
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
    fn one_probability_per_item() {
        let m = WidthMultiplier::new(0.0625).unwrap();
        let mut d = Discriminator::<f32>::seeded(m, 32, 3).unwrap();
        let p = d.predict(&Tensor::zeros(&[4, 1, 32, 32])).unwrap();
        assert_eq!(p.shape(), &[4, 1]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn rejects_multichannel_input() {
        let m = WidthMultiplier::new(0.0625).unwrap();
        let mut d = Discriminator::<f32>::seeded(m, 16, 3).unwrap();
        assert!(matches!(
            d.predict(&Tensor::zeros(&[2, 3, 16, 16])),
            Err(Error::Shape { .. })
        ));
    }
}
