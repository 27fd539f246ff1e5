//! Real scalar abstraction shared by every numerical routine.

use num_complex::Complex;
use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Floating-point type the solvers run on (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this type.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    /// Converts a count or index into this type.
    fn n(x: usize) -> Self {
        Self::from_usize(x).expect("count representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Machine epsilon scaled for tolerance checks.
    fn tiny() -> Self {
        Self::min_positive_value() * Self::c(1e3)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + NumAssign + Sum + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
}

pub type Cx<S> = Complex<S>;

pub(crate) fn cx<S: Scalar>(re: S, im: S) -> Cx<S> {
    Complex::new(re, im)
}

pub(crate) fn re<S: Scalar>(x: S) -> Cx<S> {
    Complex::new(x, S::zero())
}

/// `i * x` for real `x`.
pub(crate) fn im<S: Scalar>(x: S) -> Cx<S> {
    Complex::new(S::zero(), x)
}
