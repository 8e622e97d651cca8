use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of parameters, activations and gradients.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or label.
    fn lit(x: f64) -> Self;

    fn from_count(n: usize) -> Self;

    fn to_f64_lossless(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        n as f64
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        n as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        f64::from(self)
    }
}
