//! Variational objectives and the optimizers that minimize them.
//!
//! The objective at temperature `λ` is `E_q[r_n] + KL(q‖π)/λ`, which has the
//! same minimizer over a family as `KL(q‖Gibbs posterior)`.

mod anneal;
mod convex;
mod fdcheck;
mod local;
mod sgd;

pub use anneal::{anneal, AnnealOutcome, AnnealSchedule};
pub use convex::{convex_solve_hinge, Certificate, ConvexConfig, HingeFamily, SolverKind};
pub use fdcheck::{finite_difference_check, max_relative_gradient_error};
pub use local::{local_optimize, minimize_lbfgs, LocalOutcome, LbfgsConfig};
pub use sgd::{rank_gradient, sgd_rank, step_size, SgdConfig, SgdOutcome, TracePoint};

use crate::bounds::{kl_natural_grad, kl_to_prior};
use crate::data::LabeledDataset;
use crate::error::{config, Error, Result};
use crate::measure::{Family, GaussianMeasure, IsotropicPrior};
use crate::risk::{expected_risk_natural_grad, RiskKind};

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(config(format!("temperature {lambda} must be positive and finite")));
    }
    Ok(())
}

/// `E_q[r_n] + KL(q‖π)/λ`. The ranking risk uses the mixed-pair
/// normalization.
pub fn objective(
    kind: RiskKind,
    q: &GaussianMeasure,
    ds: &LabeledDataset,
    prior: &IsotropicPrior,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(kind.expected(q, ds)? + kl_to_prior(q, prior)? / lambda)
}

/// Objective value and gradient in the natural layout.
pub(crate) fn objective_natural_grad(
    kind: RiskKind,
    q: &GaussianMeasure,
    ds: &LabeledDataset,
    prior: &IsotropicPrior,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let (risk, mut grad) = expected_risk_natural_grad(kind, q, ds)?;
    let kl = kl_to_prior(q, prior)?;
    for (g, k) in grad.iter_mut().zip(kl_natural_grad(q, prior)?) {
        *g += k / lambda;
    }
    Ok((risk + kl / lambda, grad))
}

/// Objective and gradient as functions of the unconstrained parameters.
pub(crate) struct UnconstrainedObjective<'a> {
    pub kind: RiskKind,
    pub family: Family,
    pub ds: &'a LabeledDataset,
    pub prior: &'a IsotropicPrior,
    pub lambda: f64,
}

impl UnconstrainedObjective<'_> {
    pub fn value_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let q = GaussianMeasure::from_unconstrained(self.family, self.ds.d(), params)
            .map_err(|_| Error::NonFiniteObjective)?;
        let (value, mut grad) = objective_natural_grad(self.kind, &q, self.ds, self.prior, self.lambda)?;
        q.natural_grad_to_unconstrained(&mut grad);
        Ok((value, grad))
    }

    pub fn value(&self, params: &[f64]) -> Result<f64> {
        let q = GaussianMeasure::from_unconstrained(self.family, self.ds.d(), params)
            .map_err(|_| Error::NonFiniteObjective)?;
        objective(self.kind, &q, self.ds, self.prior, self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_examples() {
        let ds = LabeledDataset::new(vec![1.0, 0.5, -0.2, 1.0, 0.3, -1.0], vec![1.0, -1.0, 1.0], 2).unwrap();
        let prior = IsotropicPrior::new(1.0, 2).unwrap();
        let q_prior = prior.as_measure(Family::Diagonal);
        // q = prior: objective equals the expected risk
        let risk = RiskKind::ZeroOne.expected(&q_prior, &ds).unwrap();
        assert_eq!(objective(RiskKind::ZeroOne, &q_prior, &ds, &prior, 3.0).unwrap(), risk);

        let q = GaussianMeasure::new(
            vec![0.5, -0.5],
            crate::measure::Covariance::Diagonal {
                variances: vec![0.3, 0.6],
            },
        )
        .unwrap();
        let risk = RiskKind::ZeroOne.expected(&q, &ds).unwrap();
        let huge = objective(RiskKind::ZeroOne, &q, &ds, &prior, 1e12).unwrap();
        assert!((huge - risk).abs() < 1e-11);

        // larger divergence at equal risk: m = 0 keeps the risk at 1/2
        let near = GaussianMeasure::isotropic(Family::Diagonal, 2, 0.9).unwrap();
        let far = GaussianMeasure::isotropic(Family::Diagonal, 2, 0.2).unwrap();
        let a = objective(RiskKind::ZeroOne, &near, &ds, &prior, 2.0).unwrap();
        let b = objective(RiskKind::ZeroOne, &far, &ds, &prior, 2.0).unwrap();
        assert!(b > a);
        assert!(objective(RiskKind::ZeroOne, &near, &ds, &prior, 0.0).is_err());
    }
}
