//! Floating point scalar abstraction.
//!
//! All geometry, resampling and network code is written against [`Real`],
//! implemented for `f32` and `f64`. Tolerances in this crate are tuned for
//! `f64`; `f32` works for the operators but the decimation tolerances are
//! loose at single precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// floating point: f32 or f64
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only if the type cannot hold it.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Total order used by priority queues; NaN sorts last.
    #[inline]
    fn total_cmp_lossy(&self, other: &Self) -> std::cmp::Ordering {
        self.to_f64_lossy().total_cmp(&other.to_f64_lossy())
    }
}

impl Real for f32 {}
impl Real for f64 {}
