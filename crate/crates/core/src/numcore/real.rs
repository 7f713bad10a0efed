use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Floating point scalar used by every network and renderer in the crate.
///
/// Implemented for `f32` (training) and `f64` (gradient verification).
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    /// Converts an `f64` literal into this type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// Bit pattern widened to 64 bits, used for exact fingerprints.
    fn bits(self) -> u64;
}

impl Real for f32 {
    #[inline]
    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Real for f64 {
    #[inline]
    fn bits(self) -> u64 {
        self.to_bits()
    }
}
