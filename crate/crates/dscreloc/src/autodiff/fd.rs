//! Central finite-difference validation of tape gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate_with_gradient, AdError, LossFunction};

/// Outcome of a finite-difference sweep over sampled coordinates.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub checked: usize,
    pub rejected: usize,
    pub max_rel_err: f64,
    pub median_rel_err: f64,
    /// Parameter index of the worst surviving sample.
    pub worst_index: Option<usize>,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Compare the tape gradient of `loss` against central differences on
/// `samples` randomly chosen coordinates.
///
/// Coordinates where the half-step and full-step difference quotients
/// disagree are treated as straddling a kink (bilinear cell edges, |·|) and
/// rejected rather than reported as gradient errors.
pub fn finite_difference_check<L: LossFunction>(
    loss: &L,
    params: &[f64],
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<FdReport, AdError> {
    let (_, grad) = evaluate_with_gradient(loss, params)?;
    compare_gradient(loss, params, &grad, samples, h, seed)
}

/// Core comparison against a caller-supplied gradient vector. Used by
/// [`finite_difference_check`] and directly by its own negative-control tests.
pub fn compare_gradient<L: LossFunction>(
    loss: &L,
    params: &[f64],
    grad: &[f64],
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<FdReport, AdError> {
    if grad.len() != loss.dim() || params.len() != loss.dim() {
        return Err(AdError::DimMismatch {
            want: loss.dim(),
            got: grad.len().min(params.len()),
        });
    }
    let mut indices: Vec<usize> = (0..params.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(samples.min(params.len()));
    indices.sort_unstable();

    let f0 = eval_f64(loss, params)?;
    let mut probe = params.to_vec();
    let mut errs: Vec<(f64, usize)> = Vec::with_capacity(indices.len());
    let mut rejected = 0usize;
    for &i in &indices {
        let x = params[i];
        let step = h * x.abs().max(1.0);
        let mut df = |delta: f64| -> Result<f64, AdError> {
            probe[i] = x + delta;
            let v = eval_f64(loss, &probe)?;
            probe[i] = x;
            Ok(v)
        };
        let fp = df(step)?;
        let fm = df(-step)?;
        let fp2 = df(0.5 * step)?;
        let fm2 = df(-0.5 * step)?;
        let full = (fp - fm) / (2.0 * step);
        let half = (fp2 - fm2) / step;
        // Smoothness filters. A kink inside the bracket shows up either as a
        // jump between the one-sided slopes (beyond what curvature explains)
        // or as disagreement between the half- and full-step quotients.
        let fwd = (fp - f0) / step;
        let bwd = (f0 - fm) / step;
        let slope_jump = (fwd - bwd).abs();
        let sided_kink = slope_jump > 0.02 * fwd.abs().max(bwd.abs())
            && slope_jump * step > 1e-9 * (1.0 + f0.abs());
        let scale = full.abs().max(half.abs()).max(1e-9 * (1.0 + f0.abs()));
        let richardson_kink = (full - half).abs() > 0.05 * scale;
        if sided_kink || richardson_kink {
            rejected += 1;
            continue;
        }
        // Richardson extrapolation of the two central estimates.
        let fd = (4.0 * half - full) / 3.0;
        let g = grad[i];
        let denom = fd.abs().max(g.abs());
        let atol = 1e-7 * (1.0 + f0.abs());
        let rel = if denom < atol {
            0.0
        } else {
            (fd - g).abs() / denom
        };
        errs.push((rel, i));
    }
    let checked = errs.len();
    errs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let median_rel_err = if checked == 0 {
        0.0
    } else {
        errs[checked / 2].0
    };
    let (max_rel_err, worst_index) = errs
        .last()
        .map(|&(e, i)| (e, Some(i)))
        .unwrap_or((0.0, None));
    Ok(FdReport {
        checked,
        rejected,
        max_rel_err,
        median_rel_err,
        worst_index,
    })
}

fn eval_f64<L: LossFunction>(loss: &L, params: &[f64]) -> Result<f64, AdError> {
    loss.eval::<f64>(params).map_err(AdError::Eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::EvalError;
    use crate::scalar::Real;

    struct Analytic;

    impl LossFunction for Analytic {
        fn dim(&self) -> usize {
            4
        }

        fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
            // Smooth mix of every primitive class.
            let q = p[0] * p[0] + p[1].sin() * p[2].exp();
            Ok(q + (p[3] * p[3] + S::c(1.0)).sqrt() * S::c(0.5))
        }
    }

    #[test]
    fn analytic_function_passes_tightly() {
        let params = [0.3, -0.8, 0.2, 1.7];
        let report = finite_difference_check(&Analytic, &params, 4, 1e-5, 11).unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_err < 1e-8, "max {}", report.max_rel_err);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let params = [0.3, -0.8, 0.2, 1.7];
        let (_, mut grad) = evaluate_with_gradient(&Analytic, &params).unwrap();
        grad[2] *= 1.5;
        grad[0] += 0.3;
        let report = compare_gradient(&Analytic, &params, &grad, 4, 1e-5, 11).unwrap();
        assert!(
            report.max_rel_err > 0.05,
            "deliberately wrong gradient went unnoticed: {report:?}"
        );
    }

    struct Kinked;

    impl LossFunction for Kinked {
        fn dim(&self) -> usize {
            2
        }

        fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
            Ok(p[0].abs() + p[1] * p[1])
        }
    }

    #[test]
    fn kink_straddling_sample_is_rejected_not_failed() {
        // p[0] sits directly on the |·| kink.
        let report = finite_difference_check(&Kinked, &[0.0, 0.4], 2, 1e-5, 3).unwrap();
        assert_eq!(report.rejected, 1);
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_err < 1e-8);
    }
}
