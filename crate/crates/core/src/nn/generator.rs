use crate::autodiff::{BnMode, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{
    check_input, encoder_layers, run_layers, Activation, Bound, ConvSpec, Layer, LayerShape, ModelKind, Network,
    ParamStore, WidthMultiplier,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const DECODER_CHANNELS: [usize; 4] = [512, 256, 128, 64];

/// Fully convolutional encoder-decoder mapping a gray image in `[-1, 1]`
/// to a depth map in `[-1, 1]`.
///
/// Encoder: four k5 s2 convolutions (128, 256, 512, 1024 channels) with
/// batch norm and LeakyReLU(0.2). Decoder: four k5 s2 transposed
/// convolutions (512, 256, 128, 64) with batch norm and ReLU, then a k5 s1
/// convolution to one channel and tanh. No skip connections.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    store: ParamStore<T>,
    layers: Vec<Layer>,
    multiplier: WidthMultiplier,
    image_size: usize,
}

impl<T: Scalar> Generator<T> {
    /// Builds an (all-zero) generator for square inputs of `image_size`.
    pub fn new(multiplier: WidthMultiplier, image_size: usize) -> Result<Self> {
        if image_size == 0 || image_size % 16 != 0 {
            return Err(Error::Config(format!(
                "generator input extent {image_size} must be a positive multiple of 16"
            )));
        }
        let mut store = ParamStore::new();
        let (mut layers, mut in_ch) = encoder_layers(&mut store, multiplier, "enc");
        for (i, &base) in DECODER_CHANNELS.iter().enumerate() {
            let out_ch = multiplier.channels(base);
            layers.push(store.conv(ConvSpec {
                name: &format!("dec{}", i + 1),
                in_ch,
                out_ch,
                kernel: 5,
                stride: 2,
                padding: 2,
                transpose: true,
                output_padding: 1,
                norm: true,
                act: Activation::Relu,
            }));
            in_ch = out_ch;
        }
        layers.push(store.conv(ConvSpec {
            name: "out",
            in_ch,
            out_ch: 1,
            kernel: 5,
            stride: 1,
            padding: 2,
            transpose: false,
            output_padding: 0,
            norm: false,
            act: Activation::Tanh,
        }));
        Ok(Self {
            store,
            layers,
            multiplier,
            image_size,
        })
    }

    /// Convenience constructor followed by [`Network::init_weights`].
    pub fn seeded(multiplier: WidthMultiplier, image_size: usize, seed: u64) -> Result<Self> {
        let mut g = Self::new(multiplier, image_size)?;
        g.init_weights(seed);
        Ok(g)
    }

    /// Records the forward pass for a `N×1×S×S` batch already on `tape`.
    pub fn forward(&mut self, tape: &mut Tape<T>, bound: &Bound, gray: Var, mode: BnMode) -> Result<Var> {
        check_input("generator_forward", tape.value(gray), self.image_size)?;
        run_layers(&self.layers, &mut self.store, tape, bound, gray, mode, None)
    }

    /// Forward pass that also reports every layer's output shape.
    pub fn forward_traced(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        gray: Var,
        mode: BnMode,
    ) -> Result<(Var, Vec<LayerShape>)> {
        check_input("generator_forward", tape.value(gray), self.image_size)?;
        let mut trace = Vec::new();
        let y = run_layers(&self.layers, &mut self.store, tape, bound, gray, mode, Some(&mut trace))?;
        Ok((y, trace))
    }

    /// Inference on a detached batch using running statistics.
    pub fn predict(&mut self, gray: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let x = tape.constant(gray.detached());
        let y = self.forward(&mut tape, &bound, x, BnMode::Eval)?;
        Ok(tape.value(y).detached())
    }
}

impl<T: Scalar> Network<T> for Generator<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Generator
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
