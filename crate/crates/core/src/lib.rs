//! Conditional-adversarial estimation of facial depth maps from gray-level
//! images: a small reverse-mode autodiff engine, the generator /
//! discriminator / Siamese networks built on it, adversarial training,
//! face cropping and dataset tooling, and the pixel-wise and verification
//! metric suites.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the `f32` production types.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod verifier;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use nn::{Discriminator, Generator, Network, Siamese, WidthMultiplier};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Generator32 = Generator<f32>;
pub type Discriminator32 = Discriminator<f32>;
pub type Siamese32 = Siamese<f32>;
