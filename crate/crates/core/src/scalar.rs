//! Scalar abstraction: every solver in this crate is generic over the
//! floating-point type. `f64` is the working precision (the concrete
//! aliases at the crate root use it); `f32` builds and runs but cannot
//! meet the default tolerances.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the model, equilibrium, PDE and
/// simulation code.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
}

/// Shorthand conversion for literals; panics only if the literal does not
/// fit the target type, which cannot happen for the constants used here.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// `usize` to scalar conversion for grid spacings and averages.
#[inline]
pub fn cast_usize<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}
