//! Scalar abstraction shared by the model, integrator and filter.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the crate (`f32` or `f64`).
///
/// Transcendental functions come from [`nalgebra::ComplexField`]; conversions
/// to and from literals go through `num-traits`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync {
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    fn is_finite_val(self) -> bool {
        self.as_f64().is_finite()
    }

    /// Smallest positive normal value.
    fn min_positive() -> Self;
}

impl Real for f32 {
    fn min_positive() -> Self {
        f32::MIN_POSITIVE
    }
}

impl Real for f64 {
    fn min_positive() -> Self {
        f64::MIN_POSITIVE
    }
}

/// Shorthand for [`Real::lit`].
#[inline]
pub(crate) fn c<T: Real>(x: f64) -> T {
    T::lit(x)
}
