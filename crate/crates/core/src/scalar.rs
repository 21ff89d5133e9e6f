//! Scalar abstraction so the pipeline runs in `f32` or `f64`.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};

/// Floating-point scalar the crate is generic over.
///
/// Implemented for `f32` and `f64`. The bounds cover ordinary arithmetic,
/// float constants (pi), compound assignment, and conversion from literal
/// constants.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy view of the value as `f64`, used at reporting boundaries.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub fn sc<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_round_trip() {
        let a: f32 = sc(0.45);
        let b: f64 = sc(0.45);
        assert_eq!(a, 0.45f32);
        assert_eq!(b, 0.45f64);
        assert_eq!(0.25f64.as_f64(), 0.25);
    }
}
