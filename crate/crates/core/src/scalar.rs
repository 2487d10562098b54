use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar used for model thresholds, leaf probabilities and
/// every attribution the explainers produce.
///
/// Implemented for `f32` and `f64`. Feature values in records stay `f64`
/// (they are measurements in data units); they are converted into the
/// model's scalar at encode time.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Tolerance used by the additivity self-checks in debug builds.
    fn additivity_tolerance() -> Self;
}

impl Scalar for f64 {
    fn additivity_tolerance() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    fn additivity_tolerance() -> Self {
        1e-4
    }
}

/// Converts an `f64` literal into `T`. Never fails for `f32`/`f64`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar")
}

#[inline]
pub fn from_usize<T: Scalar>(x: usize) -> T {
    T::from_usize(x).expect("count representable in scalar")
}

#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
