//! Deterministic annealing over an increasing ladder of temperatures.

use super::local::local_optimize;
use crate::bounds::{empirical_bound, BoundReport};
use crate::data::LabeledDataset;
use crate::error::{config, Result};
use crate::measure::{Family, GaussianMeasure, IsotropicPrior};
use crate::risk::RiskKind;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    temperatures: Vec<f64>,
    budget: usize,
}

impl AnnealSchedule {
    /// `temperatures` must be strictly increasing with at least two
    /// entries; the first may be 0.
    pub fn new(temperatures: Vec<f64>, budget: usize) -> Result<Self> {
        if temperatures.len() < 2 {
            return Err(config("an annealing schedule needs at least two temperatures"));
        }
        if !(temperatures[0] >= 0.0) || temperatures.iter().any(|t| !t.is_finite()) {
            return Err(config("temperatures must be finite and nonnegative"));
        }
        if temperatures.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(config("temperatures must be strictly increasing"));
        }
        if budget == 0 {
            return Err(config("per-step budget must be positive"));
        }
        Ok(Self {
            temperatures,
            budget,
        })
    }

    /// `0, λ/100, …, λ` with `steps` geometrically spaced positive
    /// temperatures.
    pub fn geometric(lambda: f64, steps: usize, budget: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) || steps == 0 {
            return Err(config("geometric ladder needs lambda > 0 and steps >= 1"));
        }
        let mut temperatures = vec![0.0];
        if steps == 1 {
            temperatures.push(lambda);
        } else {
            let lo = lambda / 100.0;
            for t in 0..steps {
                let frac = t as f64 / (steps - 1) as f64;
                temperatures.push(lo * 100f64.powf(frac));
            }
            *temperatures.last_mut().unwrap() = lambda;
        }
        Self::new(temperatures, budget)
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn budget(&self) -> usize {
        self.budget
    }
}

pub struct AnnealOutcome {
    pub best: GaussianMeasure,
    pub best_bound: BoundReport,
    /// One report per visited positive temperature, in order.
    pub trace: Vec<BoundReport>,
}

/// Starts at the prior, which minimizes the objective at `λ = 0`, and
/// warm-starts a local optimization at each positive temperature. Stops as
/// soon as the bound increases and returns the best-bound solution.
pub fn anneal(
    kind: RiskKind,
    family: Family,
    ds: &LabeledDataset,
    prior: &IsotropicPrior,
    schedule: &AnnealSchedule,
    epsilon: f64,
) -> Result<AnnealOutcome> {
    ds.check_dim(prior.d)?;
    let mut q = prior.as_measure(family);
    let mut trace: Vec<BoundReport> = Vec::new();
    let mut best: Option<(GaussianMeasure, BoundReport)> = None;
    for &lambda in schedule.temperatures().iter().filter(|&&t| t > 0.0) {
        q = local_optimize(kind, &q, ds, prior, lambda, schedule.budget())?.measure;
        let report = empirical_bound(kind, &q, ds, prior, lambda, epsilon)?;
        let increased = trace.last().is_some_and(|prev| report.bound > prev.bound);
        if best.as_ref().is_none_or(|(_, b)| report.bound < b.bound) {
            best = Some((q.clone(), report.clone()));
        }
        trace.push(report);
        if increased {
            break;
        }
    }
    let (best, best_bound) = best.expect("schedule has a positive temperature");
    Ok(AnnealOutcome {
        best,
        best_bound,
        trace,
    })
}
