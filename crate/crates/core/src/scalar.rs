//! Generic scalar abstraction over the floating-point type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the numerical kernels are generic over.
///
/// Implemented for `f32` and `f64` through the blanket impl; concrete
/// `f64` aliases for every public type live at the crate root.
pub trait Scalar:
    Float + FloatConst + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn from_f(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal converts to any Scalar")
    }

    /// Lossy conversion from a `usize` count.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to any Scalar")
    }
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
