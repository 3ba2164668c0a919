//! Central finite-difference check of the objective gradients.

use super::UnconstrainedObjective;
use crate::data::LabeledDataset;
use crate::measure::{GaussianMeasure, IsotropicPrior};
use crate::risk::RiskKind;

const STEP: f64 = 1e-5;
const ABS_FLOOR: f64 = 1e-8;

/// Worst per-coordinate discrepancy between `grad` and central differences
/// of `f` at `x`. The error is relative, except that it falls back to the
/// absolute difference when both values are below `1e-8` in magnitude.
pub fn max_relative_gradient_error<F>(f: F, grad: &[f64], x: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut worst = 0.0_f64;
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + step;
        let up = f(&probe);
        probe[k] = x[k] - step;
        let down = f(&probe);
        probe[k] = x[k];
        let numeric = (up - down) / (2.0 * step);
        let scale = numeric.abs().max(grad[k].abs());
        let diff = (numeric - grad[k]).abs();
        let err = if scale < ABS_FLOOR { diff } else { diff / scale };
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    worst
}

/// Checks the analytic gradient of the variational objective in the
/// unconstrained parameters, at step `1e-5`. Evaluation failures count as an
/// infinite error.
pub fn finite_difference_check(
    kind: RiskKind,
    q: &GaussianMeasure,
    ds: &LabeledDataset,
    prior: &IsotropicPrior,
    lambda: f64,
) -> f64 {
    let obj = UnconstrainedObjective {
        kind,
        family: q.family(),
        ds,
        prior,
        lambda,
    };
    let x = q.to_unconstrained();
    let Ok((_, grad)) = obj.value_grad(&x) else {
        return f64::INFINITY;
    };
    max_relative_gradient_error(|p| obj.value(p).unwrap_or(f64::NAN), &grad, &x, STEP)
}
