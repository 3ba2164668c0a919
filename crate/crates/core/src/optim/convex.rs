//! Certified minimization of the hinge objective, which is convex in the
//! natural parameters `(m, σ)`, `(m, σ_k)` or `(m, C)`.
//!
//! The feasible set is the box of half-width `M/√p` around the prior's
//! natural parameters, so it lies in the ball of radius `M` around the
//! start, with the scale coordinates kept above a positive floor. Projection
//! onto a box is exact coordinatewise clamping.

use serde::{Deserialize, Serialize};

use super::{check_lambda, objective_natural_grad};
use crate::bounds::RateFunction;
use crate::data::LabeledDataset;
use crate::error::{config, Error, Result};
use crate::measure::{tri, Covariance, Family, GaussianMeasure, IsotropicPrior};
use crate::normal::INV_SQRT_2PI;
use crate::risk::RiskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeFamily {
    /// Shared family with the variance held at `1/n`; only the mean moves.
    FixedVariance,
    Shared,
    Diagonal,
    Full,
}

impl HingeFamily {
    pub fn from_family(family: Family) -> Self {
        match family {
            Family::Shared => HingeFamily::Shared,
            Family::Diagonal => HingeFamily::Diagonal,
            Family::Full => HingeFamily::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexConfig {
    /// Radius `M` of the ball containing the feasible set; `10√d` when
    /// absent.
    pub radius: Option<f64>,
    /// Lower limit on every scale coordinate, as a fraction of `ϑ`.
    pub scale_floor: f64,
}

impl Default for ConvexConfig {
    fn default() -> Self {
        Self {
            radius: None,
            scale_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    ProjectedSubgradient,
    AcceleratedGradient,
}

/// Guarantee attached to the returned solution: its objective exceeds the
/// minimum over the feasible set by at most `gap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub solver: SolverKind,
    /// Lipschitz constant of the objective over the feasible set for the
    /// subgradient method, of its gradient for the accelerated method.
    pub lipschitz: f64,
    /// Largest gradient norm seen at an iterate.
    pub max_observed_gradient: f64,
    pub radius: f64,
    pub iterations: usize,
    pub gap: f64,
    pub objective: f64,
}

struct Problem<'a> {
    family: HingeFamily,
    ds: &'a LabeledDataset,
    prior: &'a IsotropicPrior,
    lambda: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    center: Vec<f64>,
}

impl Problem<'_> {
    fn measure_family(&self) -> Family {
        match self.family {
            HingeFamily::FixedVariance | HingeFamily::Shared => Family::Shared,
            HingeFamily::Diagonal => Family::Diagonal,
            HingeFamily::Full => Family::Full,
        }
    }

    fn measure(&self, x: &[f64]) -> Result<GaussianMeasure> {
        let d = self.ds.d();
        match self.family {
            HingeFamily::FixedVariance => GaussianMeasure::new(
                x.to_vec(),
                Covariance::Shared {
                    variance: 1.0 / self.ds.n() as f64,
                },
            ),
            _ => GaussianMeasure::from_natural(self.measure_family(), d, x),
        }
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let q = self.measure(x)?;
        let (v, mut g) = objective_natural_grad(RiskKind::Hinge, &q, self.ds, self.prior, self.lambda)?;
        if self.family == HingeFamily::FixedVariance {
            g.truncate(self.ds.d());
        }
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        Ok((v, g))
    }

    fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    /// `(1/n) Σ ‖X_i‖`.
    fn mean_row_norm(&self) -> f64 {
        self.ds
            .rows()
            .map(|(x, _)| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / self.ds.n() as f64
    }

    /// Upper bound on the objective's gradient norm over the box.
    ///
    /// Each hinge term has `|∂/∂a| ≤ 1` and `|∂/∂s| ≤ φ(0)`, and the scale
    /// derivative of `s` has norm at most `‖X_i‖` in every family. Each KL
    /// coordinate is monotone on its interval, so its extreme is at an end.
    fn lipschitz_bound(&self) -> f64 {
        let d = self.ds.d();
        let v = self.prior.variance;
        let risk = self.mean_row_norm() * (1.0 + INV_SQRT_2PI * INV_SQRT_2PI).sqrt();
        let mut kl_sq = 0.0;
        for k in 0..d {
            let m = self.lo[k].abs().max(self.hi[k].abs());
            kl_sq += (m / v).powi(2);
        }
        let end_max = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| f(lo).abs().max(f(hi).abs());
        let scale_grad = |s: f64| s / v - 1.0 / s;
        match self.family {
            HingeFamily::FixedVariance => {}
            HingeFamily::Shared => {
                kl_sq += (d as f64 * end_max(&scale_grad, self.lo[d], self.hi[d])).powi(2);
            }
            HingeFamily::Diagonal => {
                for j in d..2 * d {
                    kl_sq += end_max(&scale_grad, self.lo[j], self.hi[j]).powi(2);
                }
            }
            HingeFamily::Full => {
                for i in 0..d {
                    for j in 0..=i {
                        let idx = d + tri(i, j);
                        kl_sq += if i == j {
                            end_max(&scale_grad, self.lo[idx], self.hi[idx]).powi(2)
                        } else {
                            (self.lo[idx].abs().max(self.hi[idx].abs()) / v).powi(2)
                        };
                    }
                }
            }
        }
        risk + kl_sq.sqrt() / self.lambda
    }

    /// Lipschitz constant of the gradient for the fixed-variance family:
    /// each term's second derivative in `a` is at most `φ(0)/s_i` with
    /// `s_i = ‖X_i‖/√n`.
    fn smoothness_bound(&self) -> f64 {
        let n = self.ds.n() as f64;
        self.mean_row_norm() * n.sqrt() * INV_SQRT_2PI + 1.0 / (self.lambda * self.prior.variance)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs `k` iterations of the certified solver for the hinge objective at
/// temperature `λ`.
pub fn convex_solve_hinge(
    ds: &LabeledDataset,
    prior: &IsotropicPrior,
    lambda: f64,
    family: HingeFamily,
    k: usize,
    cfg: &ConvexConfig,
) -> Result<(GaussianMeasure, Certificate)> {
    check_lambda(lambda)?;
    ds.check_dim(prior.d)?;
    let rate = RateFunction::for_risk(RiskKind::Hinge, prior, ds);
    let limit = rate.validity_limit(ds.n());
    if lambda >= limit {
        return Err(Error::OutOfValidityInterval {
            kind: rate.name(),
            lambda,
            limit,
        });
    }
    let d = ds.d();
    let radius = cfg.radius.unwrap_or(10.0 * (d as f64).sqrt());
    if !(radius > 0.0 && radius.is_finite()) || !(cfg.scale_floor > 0.0) {
        return Err(config("radius and scale floor must be positive"));
    }
    let theta = prior.variance.sqrt();
    let floor = cfg.scale_floor * theta;

    let mf = match family {
        HingeFamily::FixedVariance => None,
        HingeFamily::Shared => Some(Family::Shared),
        HingeFamily::Diagonal => Some(Family::Diagonal),
        HingeFamily::Full => Some(Family::Full),
    };
    let center = match mf {
        None => vec![0.0; d],
        Some(f) => prior.as_measure(f).to_natural(),
    };
    let p = center.len();

    if family == HingeFamily::FixedVariance {
        let problem = Problem {
            family,
            ds,
            prior,
            lambda,
            lo: vec![f64::NEG_INFINITY; p],
            hi: vec![f64::INFINITY; p],
            center,
        };
        return accelerated(&problem, radius, k);
    }

    let half = radius / (p as f64).sqrt();
    let mut lo: Vec<f64> = center.iter().map(|c| c - half).collect();
    let hi: Vec<f64> = center.iter().map(|c| c + half).collect();
    let scale_coords: Vec<usize> = match family {
        HingeFamily::Full => (0..d).map(|k| d + tri(k, k)).collect(),
        _ => (d..p).collect(),
    };
    for j in scale_coords {
        lo[j] = lo[j].max(floor);
    }
    let problem = Problem {
        family,
        ds,
        prior,
        lambda,
        lo,
        hi,
        center,
    };
    subgradient(&problem, radius, k)
}

fn subgradient(problem: &Problem, radius: f64, k: usize) -> Result<(GaussianMeasure, Certificate)> {
    let lipschitz = problem.lipschitz_bound();
    let step = radius / ((k + 1) as f64).sqrt();
    let mut x = problem.center.clone();
    problem.project(&mut x);
    let mut best = (f64::INFINITY, x.clone());
    let mut max_observed = 0.0_f64;
    for j in 0..=k {
        let (v, g) = problem.value_grad(&x)?;
        if v < best.0 {
            best = (v, x.clone());
        }
        let gnorm = norm(&g);
        max_observed = max_observed.max(gnorm);
        if j == k || gnorm == 0.0 {
            break;
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= step * gi / gnorm;
        }
        problem.project(&mut x);
    }
    let certificate = Certificate {
        solver: SolverKind::ProjectedSubgradient,
        lipschitz,
        max_observed_gradient: max_observed,
        radius,
        iterations: k,
        gap: lipschitz * radius / ((k + 1) as f64).sqrt(),
        objective: best.0,
    };
    Ok((problem.measure(&best.1)?, certificate))
}

fn project_ball(x: &mut [f64], radius: f64) {
    let r = norm(x);
    if r > radius {
        x.iter_mut().for_each(|v| *v *= radius / r);
    }
}

/// Projected accelerated gradient on the mean over the ball `‖m‖ ≤ M`.
/// After `j ≥ 1` steps the iterate is within `2LM²/(j+1)²` of optimal; the
/// start is within `‖∇f(0)‖·M`. The best iterate carries the smaller of the
/// bounds reached so far.
fn accelerated(problem: &Problem, radius: f64, k: usize) -> Result<(GaussianMeasure, Certificate)> {
    let smooth = problem.smoothness_bound();
    let d = problem.center.len();
    let mut x = vec![0.0; d];
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let (v0, g0) = problem.value_grad(&x)?;
    let mut max_observed = norm(&g0);
    let mut best = (v0, x.clone());
    let mut gap = max_observed * radius;
    for j in 1..=k {
        let (_, gy) = problem.value_grad(&y)?;
        max_observed = max_observed.max(norm(&gy));
        let mut next: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - g / smooth).collect();
        project_ball(&mut next, radius);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        y = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + momentum * (a - b))
            .collect();
        x = next;
        t = t_next;
        let v = problem.value_grad(&x)?.0;
        if v < best.0 {
            best = (v, x.clone());
        }
        gap = gap.min(2.0 * smooth * radius * radius / ((j + 1) as f64).powi(2));
    }
    let certificate = Certificate {
        solver: SolverKind::AcceleratedGradient,
        lipschitz: smooth,
        max_observed_gradient: max_observed,
        radius,
        iterations: k,
        gap,
        objective: best.0,
    };
    Ok((problem.measure(&best.1)?, certificate))
}
