//! Storage scalar for embeddings and fitted model parameters.
//!
//! Everything numeric in the crate is generic over [`Scalar`]; sums, dot
//! products and densities are accumulated in `f64` whatever the storage type.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Widen to `f64` for accumulation.
    fn as_f64(self) -> f64;

    /// Narrow from `f64`, rounding to nearest.
    fn from_f64_lossy(value: f64) -> Self;

    const NAME: &'static str;
}

impl Scalar for f32 {
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64_lossy(value: f64) -> Self {
        value as f32
    }

    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64_lossy(value: f64) -> Self {
        value
    }

    const NAME: &'static str = "f64";
}
