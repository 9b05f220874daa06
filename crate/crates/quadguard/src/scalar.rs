//! Scalar abstraction so the estimation stack runs on `f32` or `f64`.

use std::fmt::Display;
use std::iter::Sum;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar used throughout the crate.
///
/// Implemented for `f32` and `f64`. Configuration values and literal
/// constants are written as `f64` and converted through [`Real::cast`].
pub trait Real:
    RealField + FromPrimitive + ToPrimitive + Copy + Default + Sum + Display
{
    /// Machine epsilon of the concrete type.
    const EPS: Self;

    /// Converts a finite `f64` constant or configuration value.
    fn cast(value: f64) -> Self {
        Self::from_f64(value).expect("value not representable in scalar type")
    }

    /// Widens to `f64` for reporting and serialization.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Real for f32 {
    const EPS: Self = f32::EPSILON;
}

impl Real for f64 {
    const EPS: Self = f64::EPSILON;
}

/// `base` interpreted at `f64` precision, floored by a multiple of machine
/// epsilon so validation stays usable at lower precision.
pub(crate) fn scaled_tol<T: Real>(base: f64, eps_multiple: f64) -> T {
    let floor = T::EPS * T::cast(eps_multiple);
    let base = T::cast(base);
    if base > floor {
        base
    } else {
        floor
    }
}
