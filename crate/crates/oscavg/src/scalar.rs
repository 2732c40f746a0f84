//! Scalar abstraction: numeric kernels are generic over the float width.

use num_traits::{Float, FloatConst, FromPrimitive};
use std::fmt::{Debug, Display, LowerExp};

/// Floating-point scalar the toolkit works over (`f32` or `f64`).
///
/// Everything numerical in this crate is written against this trait; the
/// crate root exports `f64` aliases for the common case.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Conversion from an `f64` literal. Panics only for non-representable
    /// values, which cannot happen for the literals used in this crate.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("scalar conversion from f64 literal")
    }

    fn lossy_f64(self) -> f64;

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("scalar conversion from usize")
    }
}

impl Real for f32 {
    fn lossy_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn lossy_f64(self) -> f64 {
        self
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = a % two_pi;
    if r > T::PI() {
        r = r - two_pi;
    } else if r <= -T::PI() {
        r = r + two_pi;
    }
    r
}

/// Wrap an angle into `[0, 2*pi)`.
pub fn wrap_angle_positive<T: Real>(a: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = a % two_pi;
    if r < T::zero() {
        r = r + two_pi;
    }
    if r >= two_pi {
        r = r - two_pi;
    }
    r
}
