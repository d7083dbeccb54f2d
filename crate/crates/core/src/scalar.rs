//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Production code runs on `f32`; gradient verification re-runs the same
//! generic code on `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type usable inside a [`crate::Tensor`].
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; used for hyper-parameters and constants.
    fn from_f64_lossy(v: f64) -> Self;

    /// Lossy conversion to `f32`; the on-disk checkpoint precision.
    fn to_f32_lossy(self) -> f32;

    fn from_f32_exact(v: f32) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            #[inline]
            fn from_f64_lossy(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f32_lossy(self) -> f32 {
                self as f32
            }
            #[inline]
            fn from_f32_exact(v: f32) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    )*};
}

impl_scalar!(f32, f64);

/// Shorthand for `T::from_f64_lossy`.
#[inline]
pub fn cst<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}
