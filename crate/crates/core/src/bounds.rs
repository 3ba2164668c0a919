//! KL divergences to the prior, rate functions and the computable empirical
//! PAC-Bayes bound
//!
//! ```text
//! ∫R dρ ≤ ∫r_n dρ + (f(λ,n) + KL(ρ‖π) + log(1/ε)) / λ
//! ```
//!
//! which holds with probability at least `1−ε` simultaneously for all `ρ`.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{config, Error, Result};
use crate::measure::{Covariance, Family, GaussianMeasure, IsotropicPrior};
use crate::risk::{auc_normalization_ratio, RiskKind};

/// Which expression to use for the divergence term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlForm {
    /// The Gaussian KL divergence.
    #[default]
    Exact,
    /// `Σ_k [½ log(ϑ²/σ²_k) + σ²_k/ϑ²] + ‖m‖²/ϑ² − d/2`, which doubles the
    /// trace and mean terms of the exact divergence. Kept for comparison.
    Doubled,
}

fn check_prior(q: &GaussianMeasure, prior: &IsotropicPrior) -> Result<()> {
    if q.dim() != prior.d {
        return Err(Error::DimensionMismatch {
            expected: prior.d,
            found: q.dim(),
        });
    }
    Ok(())
}

/// `KL(q ‖ N(0, ϑ²I)) = ½[tr Σ/ϑ² + ‖m‖²/ϑ² − d + d log ϑ² − log det Σ]`.
pub fn kl_to_prior(q: &GaussianMeasure, prior: &IsotropicPrior) -> Result<f64> {
    kl_to_prior_with(q, prior, KlForm::Exact)
}

pub fn kl_to_prior_with(q: &GaussianMeasure, prior: &IsotropicPrior, form: KlForm) -> Result<f64> {
    check_prior(q, prior)?;
    let d = q.dim() as f64;
    let v = prior.variance;
    let mean_sq: f64 = q.mean().iter().map(|m| m * m).sum();
    let log_ratio = d * v.ln() - q.log_det();
    let kl = match form {
        KlForm::Exact => 0.5 * ((q.trace() + mean_sq) / v - d + log_ratio),
        KlForm::Doubled => 0.5 * log_ratio + (q.trace() + mean_sq) / v - 0.5 * d,
    };
    // exact form is nonnegative up to rounding
    Ok(if form == KlForm::Exact { kl.max(0.0) } else { kl })
}

/// Gradient of the exact KL in the natural layout.
pub fn kl_natural_grad(q: &GaussianMeasure, prior: &IsotropicPrior) -> Result<Vec<f64>> {
    check_prior(q, prior)?;
    let d = q.dim();
    let v = prior.variance;
    let mut g: Vec<f64> = q.mean().iter().map(|m| m / v).collect();
    match &q.covariance {
        Covariance::Shared { variance } => {
            let s = variance.sqrt();
            g.push(d as f64 * (s / v - 1.0 / s));
        }
        Covariance::Diagonal { variances } => {
            g.extend(variances.iter().map(|var| {
                let s = var.sqrt();
                s / v - 1.0 / s
            }));
        }
        Covariance::Full { cholesky } => {
            let start = g.len();
            g.extend(cholesky.iter().map(|c| c / v));
            for k in 0..d {
                let idx = crate::measure::tri(k, k);
                g[start + idx] -= 1.0 / cholesky[idx];
            }
        }
    }
    Ok(g)
}

/// Bounds on the exponential moments of the risk deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateFunction {
    /// `f = λ²/(2n)`.
    HoeffdingClassif,
    /// `f = λ²/(n−1)`.
    HoeffdingRank,
    /// `f = λ²/(4n) − ½ log(1 − ϑ²λ²c_x²/(4n))`, for `λ < (2/c_x)√(n/ϑ²)`.
    HoeffdingHinge {
        prior_variance: f64,
        feature_bound: f64,
    },
    /// `g = Cλ²/(2n−λ)`, for `λ < 2n`.
    BernsteinClassif { margin: f64 },
    /// `g = Cλ²/(n−1−4λ)`, for `λ < (n−1)/4`.
    BernsteinRank { margin: f64 },
}

impl RateFunction {
    pub fn name(&self) -> &'static str {
        match self {
            RateFunction::HoeffdingClassif => "hoeffding_classif",
            RateFunction::HoeffdingRank => "hoeffding_rank",
            RateFunction::HoeffdingHinge { .. } => "hoeffding_hinge",
            RateFunction::BernsteinClassif { .. } => "bernstein_classif",
            RateFunction::BernsteinRank { .. } => "bernstein_rank",
        }
    }

    /// Supremum of the open validity interval for `λ`.
    pub fn validity_limit(&self, n: usize) -> f64 {
        let n = n as f64;
        match *self {
            RateFunction::HoeffdingClassif | RateFunction::HoeffdingRank => f64::INFINITY,
            RateFunction::HoeffdingHinge {
                prior_variance,
                feature_bound,
            } => {
                if feature_bound == 0.0 {
                    f64::INFINITY
                } else {
                    (2.0 / feature_bound) * (n / prior_variance).sqrt()
                }
            }
            RateFunction::BernsteinClassif { .. } => 2.0 * n,
            RateFunction::BernsteinRank { .. } => (n - 1.0) / 4.0,
        }
    }

    fn check(&self, lambda: f64, n: usize) -> Result<()> {
        let limit = self.validity_limit(n);
        if !(lambda > 0.0 && lambda < limit) {
            return Err(Error::OutOfValidityInterval {
                kind: self.name(),
                lambda,
                limit,
            });
        }
        if matches!(self, RateFunction::HoeffdingRank | RateFunction::BernsteinRank { .. }) && n < 2
        {
            return Err(config("ranking rates need n >= 2"));
        }
        Ok(())
    }

    /// The Hoeffding rate `f(λ, n)`.
    pub fn rate_f(&self, lambda: f64, n: usize) -> Result<f64> {
        self.check(lambda, n)?;
        let nf = n as f64;
        match *self {
            RateFunction::HoeffdingClassif => Ok(lambda * lambda / (2.0 * nf)),
            RateFunction::HoeffdingRank => Ok(lambda * lambda / (nf - 1.0)),
            RateFunction::HoeffdingHinge {
                prior_variance,
                feature_bound,
            } => {
                let inner = prior_variance * lambda * lambda * feature_bound * feature_bound / (4.0 * nf);
                Ok(lambda * lambda / (4.0 * nf) - 0.5 * (1.0 - inner).ln())
            }
            _ => Err(Error::WrongRateKind(self.name())),
        }
    }

    /// The Bernstein rate `g(λ, n)`.
    pub fn rate_g(&self, lambda: f64, n: usize) -> Result<f64> {
        self.check(lambda, n)?;
        let nf = n as f64;
        match *self {
            RateFunction::BernsteinClassif { margin } => {
                Ok(margin * lambda * lambda / (2.0 * nf - lambda))
            }
            RateFunction::BernsteinRank { margin } => {
                Ok(margin * lambda * lambda / (nf - 1.0 - 4.0 * lambda))
            }
            _ => Err(Error::WrongRateKind(self.name())),
        }
    }

    /// The Hoeffding rate matching a risk kind.
    pub fn for_risk(kind: RiskKind, prior: &IsotropicPrior, ds: &LabeledDataset) -> Self {
        match kind {
            RiskKind::ZeroOne => RateFunction::HoeffdingClassif,
            RiskKind::Auc => RateFunction::HoeffdingRank,
            RiskKind::Hinge => RateFunction::HoeffdingHinge {
                prior_variance: prior.variance,
                feature_bound: ds.feature_bound(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub expected_empirical_risk: f64,
    pub kl: f64,
    pub rate_value: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub bound: f64,
    pub family: Family,
    pub kind: RiskKind,
    pub n: usize,
    pub d: usize,
}

/// `risk + (rate + kl + log(1/ε)) / λ`.
pub fn assemble_bound(risk: f64, kl: f64, rate_value: f64, lambda: f64, epsilon: f64) -> f64 {
    risk + (rate_value + kl + (1.0 / epsilon).ln()) / lambda
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(config(format!("epsilon = {epsilon} must lie in (0, 1)")));
    }
    Ok(())
}

/// The empirical bound for `q` at temperature `λ` and confidence `1−ε`,
/// with the Hoeffding rate of the given risk. For ranking, the risk term is
/// the `n(n−1)`-normalized U-statistic expectation.
pub fn empirical_bound(
    kind: RiskKind,
    q: &GaussianMeasure,
    ds: &LabeledDataset,
    prior: &IsotropicPrior,
    lambda: f64,
    epsilon: f64,
) -> Result<BoundReport> {
    check_epsilon(epsilon)?;
    let rate = RateFunction::for_risk(kind, prior, ds);
    let rate_value = rate.rate_f(lambda, ds.n())?;
    let mut risk = kind.expected(q, ds)?;
    if kind == RiskKind::Auc {
        risk *= auc_normalization_ratio(ds);
    }
    let kl = kl_to_prior(q, prior)?;
    Ok(BoundReport {
        expected_empirical_risk: risk,
        kl,
        rate_value,
        lambda,
        epsilon,
        bound: assemble_bound(risk, kl, rate_value, lambda, epsilon),
        family: q.family(),
        kind,
        n: ds.n(),
        d: ds.d(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// `λ = √(nd)`.
    Classif01,
    /// `λ = (1/c_x)√(n/ϑ²)`.
    Hinge,
    /// `λ = √(d(n−1)/2)`.
    Rank01,
    /// `λ = 2n/(C+2)`.
    ClassifMargin,
    /// `λ = (n−1)/(C+5)`.
    RankMargin,
}

/// Temperatures that optimize the oracle rates of the corresponding
/// settings.
pub fn recommended_lambda(
    rule: LambdaRule,
    n: usize,
    d: usize,
    prior_variance: f64,
    feature_bound: f64,
    margin: f64,
) -> Result<f64> {
    let (n, d) = (n as f64, d as f64);
    if n < 2.0 || d < 1.0 {
        return Err(config("recommended lambda needs n >= 2 and d >= 1"));
    }
    let lambda = match rule {
        LambdaRule::Classif01 => (n * d).sqrt(),
        LambdaRule::Hinge => {
            if !(feature_bound > 0.0 && prior_variance > 0.0) {
                return Err(config("hinge rule needs positive c_x and prior variance"));
            }
            (n / prior_variance).sqrt() / feature_bound
        }
        LambdaRule::Rank01 => (d * (n - 1.0) / 2.0).sqrt(),
        LambdaRule::ClassifMargin => {
            if margin < 0.0 {
                return Err(config("margin constant must be nonnegative"));
            }
            2.0 * n / (margin + 2.0)
        }
        LambdaRule::RankMargin => {
            if margin < 0.0 {
                return Err(config("margin constant must be nonnegative"));
            }
            (n - 1.0) / (margin + 5.0)
        }
    };
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prior(v: f64, d: usize) -> IsotropicPrior {
        IsotropicPrior::new(v, d).unwrap()
    }

    #[test]
    fn kl_examples() {
        let p = prior(2.5, 3);
        for family in Family::ALL {
            let q = GaussianMeasure::isotropic(family, 3, 2.5).unwrap();
            assert!(kl_to_prior(&q, &p).unwrap().abs() < 1e-15);
        }
        let q = GaussianMeasure::new(vec![1.0], Covariance::Shared { variance: 1.0 }).unwrap();
        assert!((kl_to_prior(&q, &prior(1.0, 1)).unwrap() - 0.5).abs() < 1e-15);

        let theta2 = 1.7;
        let q = GaussianMeasure::new(
            vec![0.0, 0.0],
            Covariance::Diagonal {
                variances: vec![theta2 / std::f64::consts::E, theta2],
            },
        )
        .unwrap();
        let kl = kl_to_prior(&q, &prior(theta2, 2)).unwrap();
        assert!((kl - 0.5 / std::f64::consts::E).abs() < 1e-14);
        // the same divergence by one-dimensional quadrature of q log(q/p)
        // on the first coordinate (the second coordinate matches the prior)
        let s = (theta2 / std::f64::consts::E).sqrt();
        let t = theta2.sqrt();
        let density = |x: f64, sd: f64| (-(x * x) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let h = 1e-4;
        let quad: f64 = (-200_000..=200_000)
            .map(|k| {
                let x = k as f64 * h;
                let qx = density(x, s);
                if qx > 0.0 {
                    qx * (qx / density(x, t)).ln() * h
                } else {
                    0.0
                }
            })
            .sum();
        assert!((quad - kl).abs() < 1e-8, "{quad} vs {kl}");
        assert!(matches!(
            kl_to_prior(&q, &prior(1.0, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn doubled_form_differs_only_in_trace_and_mean_terms() {
        let q = GaussianMeasure::new(
            vec![0.4, -0.3],
            Covariance::Diagonal {
                variances: vec![0.5, 2.0],
            },
        )
        .unwrap();
        let p = prior(1.3, 2);
        let exact = kl_to_prior(&q, &p).unwrap();
        let doubled = kl_to_prior_with(&q, &p, KlForm::Doubled).unwrap();
        let extra = 0.5 * (q.trace() + 0.25) / 1.3;
        assert!((doubled - exact - extra).abs() < 1e-14);
    }

    #[test]
    fn kl_nonnegative_and_full_matches_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let d = rng.random_range(1..5);
            let family = Family::ALL[rng.random_range(0..3)];
            let params: Vec<f64> = (0..family.param_len(d))
                .map(|_| rng.random_range(-1.5..1.5))
                .collect();
            let q = GaussianMeasure::from_unconstrained(family, d, &params).unwrap();
            let p = prior(rng.random_range(0.1..3.0), d);
            assert!(kl_to_prior(&q, &p).unwrap() > 0.0);

            let diag: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..2.0)).collect();
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut chol = vec![0.0; d * (d + 1) / 2];
            for k in 0..d {
                chol[crate::measure::tri(k, k)] = diag[k];
            }
            let full = GaussianMeasure::new(mean.clone(), Covariance::Full { cholesky: chol }).unwrap();
            let dg = GaussianMeasure::new(
                mean,
                Covariance::Diagonal {
                    variances: diag.iter().map(|c| c * c).collect(),
                },
            )
            .unwrap();
            let a = kl_to_prior(&full, &p).unwrap();
            let b = kl_to_prior(&dg, &p).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn rate_examples() {
        let classif = RateFunction::HoeffdingClassif;
        assert!((classif.rate_f(10.0, 100).unwrap() - 0.5).abs() < 1e-15);
        assert!((RateFunction::HoeffdingRank.rate_f(10.0, 101).unwrap() - 1.0).abs() < 1e-15);

        // ϑ²λ²c_x²/(4n) = 3/4 with n = 100, ϑ² = 1, c_x = 1 → λ = √300
        let hinge = RateFunction::HoeffdingHinge {
            prior_variance: 1.0,
            feature_bound: 1.0,
        };
        let lambda = 300f64.sqrt();
        let expected = lambda * lambda / 400.0 + 0.5 * 4f64.ln();
        assert!((hinge.rate_f(lambda, 100).unwrap() - expected).abs() < 1e-12);

        let bc = RateFunction::BernsteinClassif { margin: 1.0 };
        assert!((bc.rate_g(100.0, 100).unwrap() - 100.0).abs() < 1e-12);
        let br = RateFunction::BernsteinRank { margin: 2.0 };
        let lambda = 100.0 / 8.0;
        assert!((br.rate_g(lambda, 101).unwrap() - 4.0 * lambda * lambda / 100.0).abs() < 1e-12);
    }

    #[test]
    fn validity_boundaries_are_rejected() {
        let n = 100;
        let cases = [
            RateFunction::BernsteinClassif { margin: 1.0 },
            RateFunction::BernsteinRank { margin: 1.0 },
        ];
        for rate in cases {
            let limit = rate.validity_limit(n);
            assert!(rate.rate_g(limit, n).is_err());
            assert!(rate.rate_g(limit * (1.0 + 1e-12), n).is_err());
            assert!(rate.rate_g(limit * (1.0 - 1e-9), n).is_ok());
        }
        let hinge = RateFunction::HoeffdingHinge {
            prior_variance: 0.5,
            feature_bound: 2.0,
        };
        let limit = hinge.validity_limit(n);
        assert!((limit - 2.0 / 2.0 * (100.0_f64 / 0.5).sqrt()).abs() < 1e-12);
        assert!(matches!(
            hinge.rate_f(limit, n),
            Err(Error::OutOfValidityInterval { .. })
        ));
        assert!(hinge.rate_f(limit * 0.999, n).unwrap().is_finite());
        assert!(RateFunction::HoeffdingClassif.rate_f(0.0, n).is_err());
        assert!(matches!(
            RateFunction::HoeffdingClassif.rate_g(1.0, n),
            Err(Error::WrongRateKind(_))
        ));
        assert!(matches!(
            RateFunction::BernsteinRank { margin: 1.0 }.rate_f(1.0, n),
            Err(Error::WrongRateKind(_))
        ));
    }

    #[test]
    fn assembly_example() {
        let b = assemble_bound(0.2, 1.0, RateFunction::HoeffdingClassif.rate_f(10.0, 100).unwrap(), 10.0, 0.05);
        assert!((b - (0.2 + (0.5 + 1.0 + 20f64.ln()) / 10.0)).abs() < 1e-15);
        assert!((b - 0.649_573_2).abs() < 1e-6);
        // ε → 1, kl = 0, λ → ∞
        let b = assemble_bound(0.3, 0.0, 1e6 * 1e6 / (2.0 * 1e14), 1e6, 1.0 - 1e-12);
        assert!((b - 0.3).abs() < 1e-5);
    }

    #[test]
    fn ranking_toy_bound() {
        let ds = LabeledDataset::new(vec![1.0, 0.0, 0.0, 1.0], vec![1.0, -1.0], 2).unwrap();
        let p = prior(1.0, 2);
        let q = GaussianMeasure::isotropic(Family::Diagonal, 2, 1.0).unwrap();
        let r = empirical_bound(RiskKind::Auc, &q, &ds, &p, 2.0, 0.1).unwrap();
        assert_eq!(r.expected_empirical_risk, 0.5);
        assert_eq!(r.kl, 0.0);
        assert_eq!(r.rate_value, 4.0);
        assert!((r.bound - (0.5 + (4.0 + 10f64.ln()) / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn bound_rejects_bad_epsilon_and_lambda() {
        let ds = LabeledDataset::new(vec![1.0, -1.0], vec![1.0, -1.0], 1).unwrap();
        let p = prior(1.0, 1);
        let q = p.as_measure(Family::Shared);
        assert!(empirical_bound(RiskKind::ZeroOne, &q, &ds, &p, 1.0, 0.0).is_err());
        assert!(empirical_bound(RiskKind::ZeroOne, &q, &ds, &p, 1.0, 1.0).is_err());
        assert!(empirical_bound(RiskKind::ZeroOne, &q, &ds, &p, -1.0, 0.5).is_err());
        // hinge: limit (2/1)√(2/1)
        assert!(empirical_bound(RiskKind::Hinge, &q, &ds, &p, 2.0 * 2f64.sqrt(), 0.5).is_err());
    }

    #[test]
    fn shrinking_covariance_blows_up_the_bound() {
        let ds = LabeledDataset::new(vec![1.0, 0.5, -1.0, 0.2], vec![1.0, -1.0], 2).unwrap();
        let p = prior(1.0, 2);
        let q = p.as_measure(Family::Full);
        let mut last = empirical_bound(RiskKind::ZeroOne, &q, &ds, &p, 5.0, 0.05).unwrap().bound;
        for k in 1..12 {
            let t = 10f64.powi(-2 * k);
            let b = empirical_bound(RiskKind::ZeroOne, &q.scaled_covariance(t), &ds, &p, 5.0, 0.05)
                .unwrap()
                .bound;
            assert!(b > last);
            last = b;
        }
        assert!(last > 5.0);
    }

    #[test]
    fn recommended_lambdas() {
        let l = recommended_lambda(LambdaRule::Classif01, 100, 4, 1.0, 1.0, 1.0).unwrap();
        assert!((l - 20.0).abs() < 1e-12);
        let l = recommended_lambda(LambdaRule::RankMargin, 101, 1, 1.0, 1.0, 0.0).unwrap();
        assert!((l - 20.0).abs() < 1e-12);
        let l = recommended_lambda(LambdaRule::ClassifMargin, 100, 1, 1.0, 1.0, 2.0).unwrap();
        assert!((l - 50.0).abs() < 1e-12);
        let l = recommended_lambda(LambdaRule::Rank01, 101, 2, 1.0, 1.0, 1.0).unwrap();
        assert!((l - 10.0).abs() < 1e-12);
        let l = recommended_lambda(LambdaRule::Hinge, 100, 3, 0.25, 2.0, 1.0).unwrap();
        assert!((l - 10.0).abs() < 1e-12);
        // the hinge rule sits at half the validity limit
        let rate = RateFunction::HoeffdingHinge {
            prior_variance: 0.25,
            feature_bound: 2.0,
        };
        assert!((rate.validity_limit(100) - 2.0 * l).abs() < 1e-12);
    }
}
