//! Scalar abstraction for the floating-point side of the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Supertrait combining all bounds the learner and scorer need from a
/// floating-point scalar. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + Sum
    + Display
    + Debug
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::max_value)
    }

    /// Exact-intent ratio of two counts, `0` when the denominator is `0`.
    fn frac(num: usize, den: usize) -> Self {
        if den == 0 {
            Self::zero()
        } else {
            Self::of_usize(num) / Self::of_usize(den)
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
