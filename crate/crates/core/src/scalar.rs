use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the numerics are generic over (`f32` or `f64`).
///
/// `Display`/`FromStr` are required so text artifacts round-trip at full
/// precision; everything else is ordinary float arithmetic.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + NumAssign
        + Debug
        + Display
        + LowerExp
        + FromStr
        + Send
        + Sync
        + 'static
{
}

/// Pull an `f64` constant into the working scalar type.
pub(crate) fn cast<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("constant must be representable in the scalar type")
}
