//! Reverse-mode automatic differentiation and the optimizer driving direct fits.
//!
//! The [`Tape`] records a scalar computation as a flat list of nodes with
//! precomputed local partials; [`Var`] is the scalar handle that implements
//! [`Real`](crate::scalar::Real) so the shared geometry/loss code can run on
//! either plain `f64` or the tape. [`adam_step`] applies the bias-corrected
//! Adam update, and [`finite_difference_check`] validates tape gradients
//! against central differences.

mod adam;
mod fd;
mod param;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fd::{compare_gradient, finite_difference_check, FdReport};
pub use param::{ParamStore, SliceId};
pub use tape::{Op, Tape, Var};

use crate::scalar::Real;
use thiserror::Error;

/// Boxed error for loss-function evaluation failures.
pub type EvalError = Box<dyn std::error::Error + Send + Sync + 'static>;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("parameter vector has length {got}, loss function expects {want}")]
    DimMismatch { want: usize, got: usize },
    #[error("non-finite value produced by {op:?} at tape node {index}")]
    NonFinite { op: Op, index: usize },
    #[error("non-finite gradient entry at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("loss evaluation failed: {0}")]
    Eval(#[source] EvalError),
}

/// A scalar objective evaluable on any [`Real`] scalar.
///
/// Implementations must be deterministic and composed only of the primitives
/// exposed by [`Real`]; this is what makes the same code path differentiable
/// on the tape and probe-able with plain `f64` for finite differences.
pub trait LossFunction {
    /// Number of parameters the objective reads.
    fn dim(&self) -> usize;

    fn eval<S: crate::scalar::Real>(&self, params: &[S]) -> Result<S, EvalError>;
}

/// Reusable buffers for repeated gradient evaluations.
#[derive(Default)]
pub struct Workspace {
    tape: Tape,
    adjoints: Vec<f64>,
}

/// Evaluate `loss` at `params` and return its value and full gradient.
pub fn evaluate_with_gradient<L: LossFunction>(
    loss: &L,
    params: &[f64],
) -> Result<(f64, Vec<f64>), AdError> {
    let mut ws = Workspace::default();
    evaluate_with_gradient_in(&mut ws, loss, params)
}

/// [`evaluate_with_gradient`] reusing tape allocations across calls.
pub fn evaluate_with_gradient_in<L: LossFunction>(
    ws: &mut Workspace,
    loss: &L,
    params: &[f64],
) -> Result<(f64, Vec<f64>), AdError> {
    if params.len() != loss.dim() {
        return Err(AdError::DimMismatch {
            want: loss.dim(),
            got: params.len(),
        });
    }
    ws.tape.reset();
    let inputs = ws.tape.inputs(params);
    let out = loss.eval(&inputs).map_err(AdError::Eval)?;
    ws.tape.check_finite()?;
    let grad = ws.tape.gradient(out, params.len(), &mut ws.adjoints);
    for (index, g) in grad.iter().enumerate() {
        if !g.is_finite() {
            return Err(AdError::NonFiniteGradient { index });
        }
    }
    Ok((out.value(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Real;

    struct Quadratic;

    impl LossFunction for Quadratic {
        fn dim(&self) -> usize {
            1
        }

        fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
            Ok(p[0] * p[0])
        }
    }

    struct Constant;

    impl LossFunction for Constant {
        fn dim(&self) -> usize {
            2
        }

        fn eval<S: Real>(&self, _p: &[S]) -> Result<S, EvalError> {
            Ok(S::c(4.25))
        }
    }

    #[test]
    fn square_value_and_gradient() {
        let (v, g) = evaluate_with_gradient(&Quadratic, &[3.0]).unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let (v, g) = evaluate_with_gradient(&Constant, &[1.0, -2.0]).unwrap();
        assert_eq!(v, 4.25);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        assert!(matches!(
            evaluate_with_gradient(&Quadratic, &[1.0, 2.0]),
            Err(AdError::DimMismatch { want: 1, got: 2 })
        ));
    }

    struct Poison;

    impl LossFunction for Poison {
        fn dim(&self) -> usize {
            1
        }

        fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
            Ok((p[0] - p[0]).ln() * S::c(0.0))
        }
    }

    #[test]
    fn non_finite_intermediate_names_the_op() {
        let err = evaluate_with_gradient(&Poison, &[1.0]).unwrap_err();
        match err {
            AdError::NonFinite { op, .. } => assert_eq!(op, Op::Ln),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let mix = |p: &[f64]| -> (f64, Vec<f64>) {
            struct M;
            impl LossFunction for M {
                fn dim(&self) -> usize {
                    3
                }
                fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
                    let a = (p[0] * p[1]).sin() + p[2].exp();
                    let b = S::sum_slice(&[a, p[0], a * p[2]]);
                    Ok(b * b / (S::c(1.0) + p[1].abs()))
                }
            }
            evaluate_with_gradient(&M, p).unwrap()
        };
        let p = [0.3, -1.7, 0.9];
        let (v1, g1) = mix(&p);
        let (v2, g2) = mix(&p);
        assert_eq!(v1.to_bits(), v2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
