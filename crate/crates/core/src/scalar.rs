//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the tensors, networks and flows are generic over.
///
/// Implemented for `f32` and `f64`. Gradient checks and checkpoints assume
/// `f64`; `f32` is usable for fast experimentation.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Short name written into checkpoint headers.
    fn type_name() -> &'static str;
}

impl Real for f32 {
    fn type_name() -> &'static str {
        "f32"
    }
}

impl Real for f64 {
    fn type_name() -> &'static str {
        "f64"
    }
}
