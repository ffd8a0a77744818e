//! Derivatives of network outputs with respect to network inputs (up to
//! second order) and network parameters.
//!
//! Input derivatives are propagated forward as second-order jets through the
//! network ([`batch::JetBatch`]); parameter gradients come from a reverse
//! sweep over that jet-valued computation. Small pointwise expressions
//! (residuals, known operators) are differentiated with the scalar [`Tape`].

pub mod batch;
pub mod jet;
pub mod tape;

use std::ops::{Add, Div, Mul, Neg, Sub};

pub use batch::{jet_eval, DerivSpec, JetBatch, OutputJet};
pub use jet::Jet;
pub use tape::{Adjoints, Op, Tape, Var};

/// Scalar arithmetic shared by plain floats, jets and tape variables so that
/// operators can be written once and evaluated, propagated or differentiated.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(&self, c: f64) -> Self;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn exp(self) -> Self;

    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn lift(&self, c: f64) -> Self {
        c
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
}
