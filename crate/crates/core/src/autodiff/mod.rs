//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

mod conv;
mod dense;
pub mod kernels;
mod loss;
mod norm;
mod pointwise;
mod tape;

pub use conv::conv_transpose_extent;
pub use norm::{BnConfig, BnMode, RunningStats};
pub use pointwise::stable_sigmoid;
pub use tape::{Tape, Var};
