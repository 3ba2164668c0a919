//! Gaussian variational measures and the isotropic Gaussian prior.
//!
//! Three covariance families are supported: a shared variance `σ²I`, a
//! diagonal `diag(σ²_k)` and a full covariance stored as its lower
//! Cholesky factor `C` with `Σ = CCᵀ`.
//!
//! Two flat parameter layouts are used by the optimizers. The *natural*
//! layout is `[m, σ]`, `[m, σ_1..σ_d]` or `[m, C_lower]`, in which the
//! hinge objective is convex. The *unconstrained* layout replaces every
//! scale and every Cholesky diagonal by its logarithm, so any real vector
//! maps to a valid measure.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Shared,
    Diagonal,
    Full,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Shared, Family::Diagonal, Family::Full];

    /// Number of covariance parameters in dimension `d`.
    pub fn scale_len(self, d: usize) -> usize {
        match self {
            Family::Shared => 1,
            Family::Diagonal => d,
            Family::Full => d * (d + 1) / 2,
        }
    }

    pub fn param_len(self, d: usize) -> usize {
        d + self.scale_len(d)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Shared => "shared",
            Family::Diagonal => "diag",
            Family::Full => "full",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" | "f1" => Ok(Family::Shared),
            "diag" | "diagonal" | "f2" => Ok(Family::Diagonal),
            "full" | "f3" => Ok(Family::Full),
            other => Err(config(format!("unknown family {other:?}"))),
        }
    }
}

#[inline]
pub(crate) fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Covariance {
    Shared { variance: f64 },
    Diagonal { variances: Vec<f64> },
    /// Lower triangle of the Cholesky factor, row by row.
    Full { cholesky: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeasure {
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, covariance: Covariance) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(config("measure dimension must be at least 1"));
        }
        match &covariance {
            Covariance::Shared { variance } => {
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(config("shared variance must be positive"));
                }
            }
            Covariance::Diagonal { variances } => {
                if variances.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: variances.len(),
                    });
                }
                if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(config("diagonal variances must be positive"));
                }
            }
            Covariance::Full { cholesky } => {
                if cholesky.len() != d * (d + 1) / 2 {
                    return Err(Error::DimensionMismatch {
                        expected: d * (d + 1) / 2,
                        found: cholesky.len(),
                    });
                }
                if (0..d).any(|k| !(cholesky[tri(k, k)] > 0.0)) {
                    return Err(config("cholesky diagonal must be positive"));
                }
                if cholesky.iter().any(|c| !c.is_finite()) {
                    return Err(config("cholesky factor must be finite"));
                }
            }
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(config("mean must be finite"));
        }
        Ok(Self { mean, covariance })
    }

    /// `N(0, variance · I)` in the requested family.
    pub fn isotropic(family: Family, d: usize, variance: f64) -> Result<Self> {
        let cov = match family {
            Family::Shared => Covariance::Shared { variance },
            Family::Diagonal => Covariance::Diagonal {
                variances: vec![variance; d],
            },
            Family::Full => {
                let mut cholesky = vec![0.0; d * (d + 1) / 2];
                for k in 0..d {
                    cholesky[tri(k, k)] = variance.sqrt();
                }
                Covariance::Full { cholesky }
            }
        };
        Self::new(vec![0.0; d], cov)
    }

    pub fn family(&self) -> Family {
        match self.covariance {
            Covariance::Shared { .. } => Family::Shared,
            Covariance::Diagonal { .. } => Family::Diagonal,
            Covariance::Full { .. } => Family::Full,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `vᵀ Σ v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        match &self.covariance {
            Covariance::Shared { variance } => variance * v.iter().map(|x| x * x).sum::<f64>(),
            Covariance::Diagonal { variances } => {
                variances.iter().zip(v).map(|(s, x)| s * x * x).sum()
            }
            Covariance::Full { cholesky } => {
                let d = v.len();
                (0..d)
                    .map(|j| {
                        let w: f64 = (j..d).map(|i| cholesky[tri(i, j)] * v[i]).sum();
                        w * w
                    })
                    .sum()
            }
        }
    }

    /// Adds `coeff · ∂√(vᵀΣv)/∂scale` to `out`, in the natural layout of the
    /// covariance parameters. `s` must equal `√(vᵀΣv) > 0`.
    pub(crate) fn add_scale_grad(&self, v: &[f64], s: f64, coeff: f64, out: &mut [f64]) {
        match &self.covariance {
            Covariance::Shared { .. } => {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                out[0] += coeff * norm;
            }
            Covariance::Diagonal { variances } => {
                for ((o, var), x) in out.iter_mut().zip(variances).zip(v) {
                    *o += coeff * var.sqrt() * x * x / s;
                }
            }
            Covariance::Full { cholesky } => {
                let d = v.len();
                for j in 0..d {
                    let w: f64 = (j..d).map(|i| cholesky[tri(i, j)] * v[i]).sum();
                    let c = coeff * w / s;
                    for (i, vi) in v.iter().enumerate().skip(j) {
                        out[tri(i, j)] += c * vi;
                    }
                }
            }
        }
    }

    pub fn trace(&self) -> f64 {
        match &self.covariance {
            Covariance::Shared { variance } => variance * self.dim() as f64,
            Covariance::Diagonal { variances } => variances.iter().sum(),
            Covariance::Full { cholesky } => cholesky.iter().map(|c| c * c).sum(),
        }
    }

    pub fn log_det(&self) -> f64 {
        match &self.covariance {
            Covariance::Shared { variance } => self.dim() as f64 * variance.ln(),
            Covariance::Diagonal { variances } => variances.iter().map(|v| v.ln()).sum(),
            Covariance::Full { cholesky } => {
                2.0 * (0..self.dim()).map(|k| cholesky[tri(k, k)].ln()).sum::<f64>()
            }
        }
    }

    /// Dense covariance matrix, row-major.
    pub fn covariance_matrix(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        match &self.covariance {
            Covariance::Shared { variance } => (0..d).for_each(|k| out[k * d + k] = *variance),
            Covariance::Diagonal { variances } => {
                (0..d).for_each(|k| out[k * d + k] = variances[k])
            }
            Covariance::Full { cholesky } => {
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = (0..=i.min(j))
                            .map(|k| cholesky[tri(i, k)] * cholesky[tri(j, k)])
                            .sum();
                    }
                }
            }
        }
        out
    }

    /// Multiplies the covariance by `t > 0`.
    pub fn scaled_covariance(&self, t: f64) -> Self {
        let covariance = match &self.covariance {
            Covariance::Shared { variance } => Covariance::Shared {
                variance: variance * t,
            },
            Covariance::Diagonal { variances } => Covariance::Diagonal {
                variances: variances.iter().map(|v| v * t).collect(),
            },
            Covariance::Full { cholesky } => Covariance::Full {
                cholesky: cholesky.iter().map(|c| c * t.sqrt()).collect(),
            },
        };
        Self {
            mean: self.mean.clone(),
            covariance,
        }
    }

    /// Draws `θ = m + Lz` with `LLᵀ = Σ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        match &self.covariance {
            Covariance::Shared { variance } => {
                let s = variance.sqrt();
                for k in 0..d {
                    out[k] = self.mean[k] + s * z[k];
                }
            }
            Covariance::Diagonal { variances } => {
                for k in 0..d {
                    out[k] = self.mean[k] + variances[k].sqrt() * z[k];
                }
            }
            Covariance::Full { cholesky } => {
                for i in 0..d {
                    out[i] = self.mean[i] + (0..=i).map(|j| cholesky[tri(i, j)] * z[j]).sum::<f64>();
                }
            }
        }
    }

    /// Covariance parameters in the natural layout.
    pub fn natural_scale(&self) -> Vec<f64> {
        match &self.covariance {
            Covariance::Shared { variance } => vec![variance.sqrt()],
            Covariance::Diagonal { variances } => variances.iter().map(|v| v.sqrt()).collect(),
            Covariance::Full { cholesky } => cholesky.clone(),
        }
    }

    pub fn to_natural(&self) -> Vec<f64> {
        let mut p = self.mean.clone();
        p.extend(self.natural_scale());
        p
    }

    pub fn from_natural(family: Family, d: usize, params: &[f64]) -> Result<Self> {
        if params.len() != family.param_len(d) {
            return Err(Error::DimensionMismatch {
                expected: family.param_len(d),
                found: params.len(),
            });
        }
        let (mean, scale) = params.split_at(d);
        let covariance = match family {
            Family::Shared => Covariance::Shared {
                variance: scale[0] * scale[0],
            },
            Family::Diagonal => Covariance::Diagonal {
                variances: scale.iter().map(|s| s * s).collect(),
            },
            Family::Full => Covariance::Full {
                cholesky: scale.to_vec(),
            },
        };
        Self::new(mean.to_vec(), covariance)
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        let d = self.dim();
        let mut p = self.to_natural();
        match self.family() {
            Family::Shared | Family::Diagonal => p[d..].iter_mut().for_each(|s| *s = s.ln()),
            Family::Full => (0..d).for_each(|k| p[d + tri(k, k)] = p[d + tri(k, k)].ln()),
        }
        p
    }

    pub fn from_unconstrained(family: Family, d: usize, params: &[f64]) -> Result<Self> {
        if params.len() != family.param_len(d) {
            return Err(Error::DimensionMismatch {
                expected: family.param_len(d),
                found: params.len(),
            });
        }
        let mut p = params.to_vec();
        match family {
            Family::Shared | Family::Diagonal => p[d..].iter_mut().for_each(|s| *s = s.exp()),
            Family::Full => (0..d).for_each(|k| p[d + tri(k, k)] = p[d + tri(k, k)].exp()),
        }
        Self::from_natural(family, d, &p)
    }

    /// Converts a gradient in the natural layout to the unconstrained one.
    pub(crate) fn natural_grad_to_unconstrained(&self, grad: &mut [f64]) {
        let d = self.dim();
        let scale = self.natural_scale();
        match self.family() {
            Family::Shared | Family::Diagonal => {
                for (g, s) in grad[d..].iter_mut().zip(&scale) {
                    *g *= s;
                }
            }
            Family::Full => (0..d).for_each(|k| grad[d + tri(k, k)] *= scale[tri(k, k)]),
        }
    }
}

/// The prior `N_d(0, ϑ² I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotropicPrior {
    pub variance: f64,
    pub d: usize,
}

impl IsotropicPrior {
    pub fn new(variance: f64, d: usize) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(config("prior variance must be positive"));
        }
        if d == 0 {
            return Err(config("prior dimension must be at least 1"));
        }
        Ok(Self { variance, d })
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let sq: f64 = theta.iter().map(|t| t * t).sum();
        -0.5 * sq / self.variance
            - 0.5 * self.d as f64 * (2.0 * std::f64::consts::PI * self.variance).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let s = self.variance.sqrt();
        for o in out.iter_mut() {
            *o = s * rng.sample::<f64, _>(StandardNormal);
        }
    }

    pub fn as_measure(&self, family: Family) -> GaussianMeasure {
        GaussianMeasure::isotropic(family, self.d, self.variance).expect("valid prior")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_measure(family: Family, d: usize, rng: &mut ChaCha8Rng) -> GaussianMeasure {
        let p: Vec<f64> = (0..family.param_len(d))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        GaussianMeasure::from_unconstrained(family, d, &p).unwrap()
    }

    #[test]
    fn parameter_layouts_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for family in Family::ALL {
            let q = random_measure(family, 4, &mut rng);
            let back = GaussianMeasure::from_unconstrained(family, 4, &q.to_unconstrained()).unwrap();
            for (a, b) in q.to_natural().iter().zip(back.to_natural()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn quad_form_matches_dense_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for family in Family::ALL {
            let q = random_measure(family, 3, &mut rng);
            let sigma = q.covariance_matrix();
            let v = [0.3, -1.2, 2.0];
            let dense: f64 = (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| v[i] * sigma[i * 3 + j] * v[j])
                .sum();
            assert!((q.quad_form(&v) - dense).abs() < 1e-12);
            let tr: f64 = (0..3).map(|k| sigma[k * 3 + k]).sum();
            assert!((q.trace() - tr).abs() < 1e-12);
            assert!(q.quad_form(&v) > 0.0);
        }
    }

    #[test]
    fn rejects_invalid_covariances() {
        assert!(GaussianMeasure::new(vec![0.0], Covariance::Shared { variance: 0.0 }).is_err());
        assert!(GaussianMeasure::new(
            vec![0.0, 0.0],
            Covariance::Diagonal {
                variances: vec![1.0, -1.0]
            }
        )
        .is_err());
        assert!(GaussianMeasure::new(
            vec![0.0, 0.0],
            Covariance::Full {
                cholesky: vec![1.0, 0.5, 0.0]
            }
        )
        .is_err());
        assert!(IsotropicPrior::new(0.0, 2).is_err());
    }

    #[test]
    fn sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = GaussianMeasure::new(
            vec![1.0, -2.0],
            Covariance::Full {
                cholesky: vec![1.0, 0.5, 0.8],
            },
        )
        .unwrap();
        let n = 200_000;
        let mut buf = [0.0; 2];
        let (mut s0, mut s1, mut s01) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            q.sample(&mut rng, &mut buf);
            s0 += buf[0];
            s1 += buf[1];
            s01 += (buf[0] - 1.0) * (buf[1] + 2.0);
        }
        let nf = n as f64;
        assert!((s0 / nf - 1.0).abs() < 0.01);
        assert!((s1 / nf + 2.0).abs() < 0.01);
        assert!((s01 / nf - 0.5).abs() < 0.02);
    }
}
