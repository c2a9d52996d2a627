//! Scalar abstraction for the numeric core.
//!
//! Everything geometric is generic over [`Real`] so the same code runs in
//! `f32` and `f64`. The pipeline instantiates `f64` (see the aliases at the
//! crate root); `f32` stays available for memory-bound uses and is exercised
//! in tests.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable throughout the crate.
///
/// `nalgebra::RealField` supplies the transcendental and ordering operations,
/// `FromPrimitive`/`ToPrimitive` the boundary conversions.
pub trait Real:
    nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + std::iter::Sum<Self> + 'static
{
    /// Constant conversion from an `f64` literal.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    /// Round toward negative infinity and truncate to `i64`.
    #[inline]
    fn floor_i64(self) -> i64 {
        self.floor().to_i64().expect("value out of i64 range")
    }
}

impl Real for f32 {}
impl Real for f64 {}
