//! Limited-memory BFGS with a backtracking (Armijo) line search.
//!
//! Every accepted step strictly decreases the objective, so the returned
//! point is never worse than the start.

use std::collections::VecDeque;

use super::UnconstrainedObjective;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::measure::{GaussianMeasure, IsotropicPrior};
use crate::risk::RiskKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when the largest gradient component falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step improves the value by less than
    /// `value_tol · max(1, |f|)`.
    pub value_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            memory: 8,
            grad_tol: 1e-9,
            value_tol: 1e-13,
        }
    }
}

pub struct LocalOutcome {
    pub measure: GaussianMeasure,
    pub objective: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x0`. Returns the final point, its value and the
/// number of iterations taken.
pub fn minimize_lbfgs<F>(mut f: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<(Vec<f64>, f64, usize)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        let gmax = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if gmax < cfg.grad_tol {
            break;
        }
        iterations += 1;

        // two-loop recursion
        let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        } else {
            let gnorm = dot(&g, &g).sqrt();
            dir.iter_mut().for_each(|d| *d /= gnorm.max(1.0));
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }

        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Ok((ft, gt)) = f(&trial) {
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + 1e-4 * step * slope && ft < fx {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if improvement < cfg.value_tol * fx.abs().max(1.0) {
            break;
        }
    }
    Ok((x, fx, iterations))
}

/// Locally minimizes the variational objective from `q0` over the family of
/// `q0`, with at most `budget` iterations.
pub fn local_optimize(
    kind: RiskKind,
    q0: &GaussianMeasure,
    ds: &LabeledDataset,
    prior: &IsotropicPrior,
    lambda: f64,
    budget: usize,
) -> Result<LocalOutcome> {
    super::check_lambda(lambda)?;
    ds.check_dim(q0.dim())?;
    let obj = UnconstrainedObjective {
        kind,
        family: q0.family(),
        ds,
        prior,
        lambda,
    };
    let cfg = LbfgsConfig {
        max_iter: budget,
        ..LbfgsConfig::default()
    };
    let (x, value, iterations) = minimize_lbfgs(|p| obj.value_grad(p), &q0.to_unconstrained(), &cfg)?;
    let measure = GaussianMeasure::from_unconstrained(q0.family(), ds.d(), &x)?;
    Ok(LocalOutcome {
        measure,
        objective: value,
        iterations,
    })
}
