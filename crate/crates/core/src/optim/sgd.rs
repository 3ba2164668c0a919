//! Minibatch stochastic gradient descent for the ranking objective, over the
//! diagonal family.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_lambda;
use crate::bounds::{empirical_bound, kl_natural_grad, BoundReport};
use crate::data::LabeledDataset;
use crate::error::{config, Error, Result};
use crate::measure::{Family, GaussianMeasure, IsotropicPrior};
use crate::risk::{auc_batch_natural_grad, label_groups, RiskKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub eta: f64,
    pub offset: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Record the bound every `stride` iterations.
    pub stride: usize,
    pub epsilon: f64,
    /// Stop once the recorded bound improves by less than `tolerance` over
    /// `window` iterations.
    pub tolerance: f64,
    pub window: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            eta: 0.9,
            offset: 1.0,
            max_iter: 2000,
            seed: 0,
            stride: 1,
            epsilon: 0.05,
            tolerance: 1e-6,
            window: 50,
        }
    }
}

impl SgdConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_iter == 0 || self.stride == 0 || self.window == 0 {
            return Err(config("batch size, iteration cap, stride and window must be positive"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) || !(self.offset > 0.0) {
            return Err(config("step exponent must lie in (0, 1] and offset must be positive"));
        }
        Ok(())
    }
}

/// `1/(t+c)^η`.
pub fn step_size(t: usize, offset: f64, eta: f64) -> f64 {
    (t as f64 + offset).powf(-eta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub report: BoundReport,
}

pub struct SgdOutcome {
    pub measure: GaussianMeasure,
    pub trace: Vec<TracePoint>,
    pub iterations: usize,
}

impl SgdOutcome {
    /// Writes `iteration,expected_risk,kl,bound`.
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "iteration,expected_risk,kl,bound")?;
        for p in &self.trace {
            writeln!(
                w,
                "{},{},{},{}",
                p.iteration, p.report.expected_empirical_risk, p.report.kl, p.report.bound
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gradient of the ranking objective in the unconstrained parameters of a
/// diagonal measure, with the risk term averaged over `pairs`, or over all
/// mixed pairs when `pairs` is `None`.
pub fn rank_gradient(
    q: &GaussianMeasure,
    ds: &LabeledDataset,
    prior: &IsotropicPrior,
    lambda: f64,
    pairs: Option<&[(usize, usize)]>,
) -> Result<Vec<f64>> {
    let mut grad = match pairs {
        Some(p) if !p.is_empty() => auc_batch_natural_grad(q, ds, p),
        Some(_) => return Err(config("empty batch")),
        None => crate::risk::expected_risk_natural_grad(RiskKind::Auc, q, ds)?.1,
    };
    for (g, k) in grad.iter_mut().zip(kl_natural_grad(q, prior)?) {
        *g += k / lambda;
    }
    q.natural_grad_to_unconstrained(&mut grad);
    Ok(grad)
}

/// Starts at the prior and takes `x ← x − γ_t ĝ_t` with `γ_t = 1/(t+c)^η`,
/// where `ĝ_t` averages `B` mixed pairs drawn uniformly with replacement.
pub fn sgd_rank(
    ds: &LabeledDataset,
    prior: &IsotropicPrior,
    lambda: f64,
    cfg: &SgdConfig,
) -> Result<SgdOutcome> {
    check_lambda(lambda)?;
    cfg.validate()?;
    ds.check_dim(prior.d)?;
    let (pos, neg) = label_groups(ds);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::NoMixedPairs);
    }
    let d = ds.d();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q = prior.as_measure(Family::Diagonal);
    let mut x = q.to_unconstrained();
    let mut trace = vec![TracePoint {
        iteration: 0,
        report: empirical_bound(RiskKind::Auc, &q, ds, prior, lambda, cfg.epsilon)?,
    }];
    let mut pairs = Vec::with_capacity(cfg.batch_size);
    let mut iterations = 0;
    for t in 0..cfg.max_iter {
        pairs.clear();
        for _ in 0..cfg.batch_size {
            pairs.push((pos[rng.random_range(0..pos.len())], neg[rng.random_range(0..neg.len())]));
        }
        let g = rank_gradient(&q, ds, prior, lambda, Some(&pairs))?;
        let gamma = step_size(t, cfg.offset, cfg.eta);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= gamma * gi;
        }
        q = GaussianMeasure::from_unconstrained(Family::Diagonal, d, &x).map_err(|_| Error::NonFiniteObjective)?;
        iterations = t + 1;
        if iterations % cfg.stride != 0 {
            continue;
        }
        let report = empirical_bound(RiskKind::Auc, &q, ds, prior, lambda, cfg.epsilon)?;
        if !report.bound.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        trace.push(TracePoint {
            iteration: iterations,
            report,
        });
        let lag = cfg.window / cfg.stride;
        if lag > 0 && trace.len() > lag {
            let then = trace[trace.len() - 1 - lag].report.bound;
            if then - trace.last().unwrap().report.bound < cfg.tolerance {
                break;
            }
        }
    }
    Ok(SgdOutcome {
        measure: q,
        trace,
        iterations,
    })
}
