//! Empirical risks and their closed-form expectations under Gaussian
//! measures.
//!
//! Every expected risk here is an average of terms that depend on `q` only
//! through `a = ⟨v, m⟩` and `s = √(vᵀΣv)` for some direction `v`:
//!
//! * 0-1 loss, `v = X_i`: `Φ(−Y_i a / s)`
//! * hinge loss, `v = Y_i X_i`: `(1−a) Φ((1−a)/s) + s φ((1−a)/s)`
//! * pairwise ranking, `v = X_i − X_j` for `Y_i = +1, Y_j = −1`: `Φ(−a / s)`
//!
//! A zero direction gives `s = 0` and the term takes its value at `θ = m`:
//! `1{Y_i = −1}` for the 0-1 loss (the boundary predicts positive), `1` for
//! the hinge loss and `0` for a tied pair.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::measure::GaussianMeasure;
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    ZeroOne,
    Hinge,
    Auc,
}

impl RiskKind {
    pub const ALL: [RiskKind; 3] = [RiskKind::ZeroOne, RiskKind::Hinge, RiskKind::Auc];

    pub fn name(self) -> &'static str {
        match self {
            RiskKind::ZeroOne => "zero_one",
            RiskKind::Hinge => "hinge",
            RiskKind::Auc => "auc",
        }
    }

    /// Empirical risk at a point. For [`RiskKind::Auc`] this is the
    /// U-statistic normalized by `n(n−1)`.
    pub fn empirical(self, theta: &[f64], ds: &LabeledDataset) -> Result<f64> {
        match self {
            RiskKind::ZeroOne => empirical_01_risk(theta, ds),
            RiskKind::Hinge => empirical_hinge_risk(theta, ds),
            RiskKind::Auc => empirical_auc_risk(theta, ds),
        }
    }

    /// Closed-form expected risk. For [`RiskKind::Auc`] this is normalized
    /// by `n₊n₋`, see [`expected_auc_risk`].
    pub fn expected(self, q: &GaussianMeasure, ds: &LabeledDataset) -> Result<f64> {
        match self {
            RiskKind::ZeroOne => expected_01_risk(q, ds),
            RiskKind::Hinge => expected_hinge_risk(q, ds),
            RiskKind::Auc => expected_auc_risk(q, ds),
        }
    }
}

impl std::str::FromStr for RiskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "01" | "zero_one" | "classify01" => Ok(RiskKind::ZeroOne),
            "hinge" => Ok(RiskKind::Hinge),
            "auc" | "rank" => Ok(RiskKind::Auc),
            other => Err(crate::error::config(format!("unknown risk kind {other:?}"))),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fraction of points with `1{⟨θ, X_i⟩ ≥ 0}` disagreeing with the label.
pub fn empirical_01_risk(theta: &[f64], ds: &LabeledDataset) -> Result<f64> {
    ds.check_dim(theta.len())?;
    let wrong = ds
        .rows()
        .filter(|(x, y)| {
            let predicted = if dot(theta, x) >= 0.0 { 1.0 } else { -1.0 };
            predicted != *y
        })
        .count();
    Ok(wrong as f64 / ds.n() as f64)
}

pub fn empirical_hinge_risk(theta: &[f64], ds: &LabeledDataset) -> Result<f64> {
    ds.check_dim(theta.len())?;
    let total: f64 = ds
        .rows()
        .map(|(x, y)| (1.0 - y * dot(theta, x)).max(0.0))
        .sum();
    Ok(total / ds.n() as f64)
}

fn split_by_label(ds: &LabeledDataset) -> (Vec<usize>, Vec<usize>) {
    (0..ds.n()).partition(|&i| ds.label(i) > 0.0)
}

fn misordered_pairs(theta: &[f64], ds: &LabeledDataset) -> (usize, usize, usize) {
    let (pos, neg) = split_by_label(ds);
    let scores: Vec<f64> = ds.rows().map(|(x, _)| dot(theta, x)).collect();
    let count = pos
        .iter()
        .map(|&i| neg.iter().filter(|&&j| scores[i] < scores[j]).count())
        .sum();
    (count, pos.len(), neg.len())
}

/// U-statistic over ordered pairs `i ≠ j` of `1{(Y_i−Y_j)(⟨θ,X_i⟩−⟨θ,X_j⟩) < 0}`,
/// normalized by `n(n−1)`. Ties in score never count.
pub fn empirical_auc_risk(theta: &[f64], ds: &LabeledDataset) -> Result<f64> {
    ds.check_dim(theta.len())?;
    let (count, _, _) = misordered_pairs(theta, ds);
    let n = ds.n() as f64;
    Ok(2.0 * count as f64 / (n * (n - 1.0)))
}

/// Fraction of mixed-label pairs whose scores are strictly misordered.
pub fn auc_misorder_fraction(theta: &[f64], ds: &LabeledDataset) -> Result<f64> {
    ds.check_dim(theta.len())?;
    let (count, p, m) = misordered_pairs(theta, ds);
    if p == 0 || m == 0 {
        return Err(Error::NoMixedPairs);
    }
    Ok(count as f64 / (p * m) as f64)
}

/// The factor `2n₊n₋ / (n(n−1))` converting the mixed-pair normalization to
/// the `n(n−1)` U-statistic normalization.
pub fn auc_normalization_ratio(ds: &LabeledDataset) -> f64 {
    let (p, m) = ds.class_counts();
    let n = ds.n() as f64;
    2.0 * (p * m) as f64 / (n * (n - 1.0))
}

/// Per-term value and partial derivatives in `(a, s)`.
#[derive(Debug, Clone, Copy)]
enum Term {
    /// `Φ(−y a/s)`, value `1{y < 0}` at `s = 0`. Pairs use `y = +1`.
    Probit { y: f64 },
    Hinge,
}

impl Term {
    fn value(self, a: f64, s: f64) -> f64 {
        match self {
            Term::Probit { y } => {
                if s > 0.0 {
                    normal::cdf(-y * a / s)
                } else if y < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Term::Hinge => {
                let mu = 1.0 - a;
                if s > 0.0 {
                    let z = mu / s;
                    mu * normal::cdf(z) + s * normal::pdf(z)
                } else {
                    mu.max(0.0)
                }
            }
        }
    }

    /// `(∂/∂a, ∂/∂s)`; only called with `s > 0`.
    fn partials(self, a: f64, s: f64) -> (f64, f64) {
        match self {
            Term::Probit { y } => {
                let u = -y * a / s;
                let p = normal::pdf(u);
                (-y * p / s, -u * p / s)
            }
            Term::Hinge => {
                let z = (1.0 - a) / s;
                (-normal::cdf(z), normal::pdf(z))
            }
        }
    }
}

/// Accumulates one term; returns its value and adds `weight ×` its natural
/// gradient to `grad` when given.
fn accumulate(
    term: Term,
    v: &[f64],
    q: &GaussianMeasure,
    weight: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let a = dot(v, q.mean());
    let s = q.quad_form(v).max(0.0).sqrt();
    let value = term.value(a, s);
    if let Some(g) = grad {
        if s > 0.0 {
            let (da, ds) = term.partials(a, s);
            let d = v.len();
            for (gk, vk) in g[..d].iter_mut().zip(v) {
                *gk += weight * da * vk;
            }
            q.add_scale_grad(v, s, weight * ds, &mut g[d..]);
        }
    }
    value
}

fn terms_value_grad(
    kind: RiskKind,
    q: &GaussianMeasure,
    ds: &LabeledDataset,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    ds.check_dim(q.dim())?;
    match kind {
        RiskKind::ZeroOne | RiskKind::Hinge => {
            let w = 1.0 / ds.n() as f64;
            let mut buf = vec![0.0; ds.d()];
            let mut total = 0.0;
            for (x, y) in ds.rows() {
                let (term, v) = if kind == RiskKind::ZeroOne {
                    (Term::Probit { y }, x)
                } else {
                    buf.iter_mut().zip(x).for_each(|(b, xi)| *b = y * xi);
                    (Term::Hinge, buf.as_slice())
                };
                total += accumulate(term, v, q, w, grad.as_deref_mut());
            }
            Ok(total * w)
        }
        RiskKind::Auc => {
            let (pos, neg) = split_by_label(ds);
            if pos.is_empty() || neg.is_empty() {
                return Err(Error::NoMixedPairs);
            }
            let w = 1.0 / (pos.len() * neg.len()) as f64;
            let mut gamma = vec![0.0; ds.d()];
            let mut total = 0.0;
            for &i in &pos {
                for &j in &neg {
                    pair_direction(ds, i, j, &mut gamma);
                    total += accumulate(Term::Probit { y: 1.0 }, &gamma, q, w, grad.as_deref_mut());
                }
            }
            Ok(total * w)
        }
    }
}

pub(crate) fn pair_direction(ds: &LabeledDataset, i: usize, j: usize, out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(ds.row(i)).zip(ds.row(j)) {
        *o = a - b;
    }
}

/// `(1/n) Σ Φ(−Y_i⟨X_i, m⟩ / √(X_iᵀΣX_i))`, which equals `E_q[r_n(θ)]` for
/// the 0-1 loss.
pub fn expected_01_risk(q: &GaussianMeasure, ds: &LabeledDataset) -> Result<f64> {
    terms_value_grad(RiskKind::ZeroOne, q, ds, None)
}

/// `E_q[r^H_n(θ)]`, exact since `1 − Y_i⟨θ, X_i⟩ ~ N(1 − Γ_i m, Γ_iᵀΣΓ_i)`.
pub fn expected_hinge_risk(q: &GaussianMeasure, ds: &LabeledDataset) -> Result<f64> {
    terms_value_grad(RiskKind::Hinge, q, ds, None)
}

/// Expected misorder fraction over the `n₊n₋` mixed pairs. Multiply by
/// [`auc_normalization_ratio`] to get the expectation of
/// [`empirical_auc_risk`].
pub fn expected_auc_risk(q: &GaussianMeasure, ds: &LabeledDataset) -> Result<f64> {
    terms_value_grad(RiskKind::Auc, q, ds, None)
}

/// Expected risk and its gradient in the natural parameter layout
/// (`[m, σ]`, `[m, σ_k]` or `[m, C_lower]`).
pub fn expected_risk_natural_grad(
    kind: RiskKind,
    q: &GaussianMeasure,
    ds: &LabeledDataset,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; q.family().param_len(q.dim())];
    let value = terms_value_grad(kind, q, ds, Some(&mut grad))?;
    Ok((value, grad))
}

/// Gradient of the closed-form expected risk with respect to the
/// unconstrained parameters (`m` and log-scales, or `m` and the Cholesky
/// factor with log-diagonal).
pub fn grad_expected_risk(
    kind: RiskKind,
    q: &GaussianMeasure,
    ds: &LabeledDataset,
) -> Result<Vec<f64>> {
    let (_, mut grad) = expected_risk_natural_grad(kind, q, ds)?;
    q.natural_grad_to_unconstrained(&mut grad);
    Ok(grad)
}

/// Gradient contribution of a batch of mixed pairs, each weighted by
/// `1/len`; natural layout. Used by the stochastic ranking optimizer.
pub(crate) fn auc_batch_natural_grad(
    q: &GaussianMeasure,
    ds: &LabeledDataset,
    pairs: &[(usize, usize)],
) -> Vec<f64> {
    let mut grad = vec![0.0; q.family().param_len(q.dim())];
    let mut gamma = vec![0.0; ds.d()];
    let w = 1.0 / pairs.len() as f64;
    for &(i, j) in pairs {
        pair_direction(ds, i, j, &mut gamma);
        accumulate(Term::Probit { y: 1.0 }, &gamma, q, w, Some(&mut grad));
    }
    grad
}

/// Indices of positive and negative observations.
pub fn label_groups(ds: &LabeledDataset) -> (Vec<usize>, Vec<usize>) {
    split_by_label(ds)
}
