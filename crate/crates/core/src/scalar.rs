//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating point scalar: `f32` or `f64`.
///
/// Everything numeric is generic over this trait. Tolerances quoted in the
/// tests assume `f64`; `f32` is supported for memory-bound use.
pub trait Real: RealField + Copy + ToPrimitive + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn lit<T: Real>(value: f64) -> T {
    nalgebra::convert(value)
}

/// Widens `T` to `f64`. Infallible for the two implementors.
#[inline]
pub fn to_f64<T: Real>(value: T) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}
