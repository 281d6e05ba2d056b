//! Scalar abstraction shared by the geometry and assignment code.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("scalar literal out of range")
    }

    /// Lossy widening to `f64`.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Wraps an angle to `[-pi, pi)`.
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    // In-range values pass through untouched so exact comparisons survive.
    if a >= -T::PI() && a < T::PI() {
        return a;
    }
    let two_pi = T::TAU();
    let mut w = (a + T::PI()) % two_pi;
    if w < T::zero() {
        w += two_pi;
    }
    let w = w - T::PI();
    // `%` can land exactly on +pi after the shift for inputs like 3*pi.
    if w >= T::PI() {
        w - two_pi
    } else {
        w
    }
}
