//! Scalar abstraction shared by the plain and the differentiated evaluation paths.
//!
//! All geometry, warping, and loss code is written once against [`Real`].
//! Instantiated with `f64` it computes plain values; instantiated with
//! [`Var`](crate::autodiff::Var) it records every operation on a gradient tape
//! for reverse-mode differentiation.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Lift a plain constant. Constants never carry gradient.
    fn c(v: f64) -> Self;

    /// Current numeric value.
    fn value(self) -> f64;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn abs(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    /// Logistic function 1/(1+e^{-x}) as a fused primitive.
    fn sigmoid(self) -> Self;

    /// a*self + b with plain coefficients; a single fused operation.
    fn mul_add_c(self, a: f64, b: f64) -> Self;

    /// Fixed-order sum of a slice; one n-ary tape node.
    fn sum_slice(xs: &[Self]) -> Self;

    /// Dot product with plain coefficients; one n-ary tape node.
    fn dot_const(xs: &[Self], ws: &[f64]) -> Self;

    /// Σ aᵢ·bᵢ in fixed order; one n-ary tape node.
    fn dot(a: &[Self], b: &[Self]) -> Self;
}

impl Real for f64 {
    #[inline]
    fn c(v: f64) -> Self {
        v
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }

    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }

    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }

    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }

    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }

    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }

    #[inline]
    fn sigmoid(self) -> Self {
        1.0 / (1.0 + (-self).exp())
    }

    #[inline]
    fn mul_add_c(self, a: f64, b: f64) -> Self {
        a * self + b
    }

    #[inline]
    fn sum_slice(xs: &[Self]) -> Self {
        let mut acc = 0.0;
        for x in xs {
            acc += x;
        }
        acc
    }

    #[inline]
    fn dot_const(xs: &[Self], ws: &[f64]) -> Self {
        debug_assert_eq!(xs.len(), ws.len());
        let mut acc = 0.0;
        for (x, w) in xs.iter().zip(ws) {
            acc += x * w;
        }
        acc
    }

    #[inline]
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        acc
    }
}
