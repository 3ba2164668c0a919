//! Mean-field variational matrix completion with `M = UVᵀ`.
//!
//! The variational family factorizes across the rows of `U` and `V`, which
//! are Gaussian with full `K × K` covariances, and across the per-factor
//! variances `γ_k`, which are inverse-gamma. The prior is `U_{jk}, V_{ik} ~
//! N(0, γ_k)` with `γ_k ~ IΓ(a, b)`, and the tempered likelihood is
//! `exp(−(λ/n) Σ (Y_i − (UVᵀ)_{X_i})²)`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::data::ObservedMatrix;
use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub rank: usize,
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            a: 1.0,
            b: 1.0,
            lambda: 1.0,
            tol: 1e-9,
            max_sweeps: 200,
            seed: 0,
        }
    }
}

impl CompletionConfig {
    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(config("rank must be at least 1"));
        }
        if !(self.a > 0.0 && self.b > 0.0) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(config("prior shape and rate must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(config("lambda must be finite and nonnegative"));
        }
        if self.max_sweeps == 0 {
            return Err(config("max_sweeps must be positive"));
        }
        Ok(())
    }
}

/// Largest `b` allowed by the smallness rule `b ≤ 1/[2β(m1∨m2) log(2K(m1∨m2))]`.
pub fn b_upper_limit(beta: f64, m1: usize, m2: usize, rank: usize) -> f64 {
    let m = m1.max(m2) as f64;
    1.0 / (2.0 * beta * m * (2.0 * rank as f64 * m).ln())
}

/// A Gaussian factor row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFactor {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl RowFactor {
    /// `E[x xᵀ] = μμᵀ + Σ`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.mean * self.mean.transpose() + &self.cov
    }

    fn entropy(&self) -> f64 {
        let k = self.mean.len() as f64;
        let log_det = self
            .cov
            .clone()
            .cholesky()
            .map(|c| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
            .unwrap_or(f64::NEG_INFINITY);
        0.5 * k * (1.0 + (2.0 * std::f64::consts::PI).ln()) + 0.5 * log_det
    }
}

/// Inverse-gamma block with `E[1/γ] = shape/rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGammaFactor {
    pub shape: f64,
    pub rate: f64,
}

impl InverseGammaFactor {
    pub fn mean_inverse(&self) -> f64 {
        self.shape / self.rate
    }

    /// `E[log γ] = log β − ψ(α)`.
    pub fn mean_log(&self) -> f64 {
        self.rate.ln() - digamma(self.shape)
    }

    fn entropy(&self) -> f64 {
        self.shape + self.rate.ln() + ln_gamma(self.shape) - (1.0 + self.shape) * digamma(self.shape)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionModel {
    pub u: Vec<RowFactor>,
    pub v: Vec<RowFactor>,
    pub gamma: Vec<InverseGammaFactor>,
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    U,
    V,
}

impl CompletionModel {
    /// Means drawn from `N(0, 0.1²)`, identity covariances and the prior on
    /// every `γ_k`.
    pub fn init(m1: usize, m2: usize, cfg: &CompletionConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.rank;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 0.1).expect("valid scale");
        let mut row = || RowFactor {
            mean: DVector::from_fn(k, |_, _| normal.sample(&mut rng)),
            cov: DMatrix::identity(k, k),
        };
        let u: Vec<RowFactor> = (0..m1).map(|_| row()).collect();
        let v: Vec<RowFactor> = (0..m2).map(|_| row()).collect();
        Ok(Self {
            u,
            v,
            gamma: vec![
                InverseGammaFactor {
                    shape: cfg.a,
                    rate: cfg.b
                };
                k
            ],
            a: cfg.a,
            b: cfg.b,
            lambda: cfg.lambda,
        })
    }

    pub fn rank(&self) -> usize {
        self.gamma.len()
    }

    pub fn m1(&self) -> usize {
        self.u.len()
    }

    pub fn m2(&self) -> usize {
        self.v.len()
    }

    fn check(&self, data: &ObservedMatrix) -> Result<()> {
        if data.m1() != self.m1() || data.m2() != self.m2() {
            return Err(Error::DimensionMismatch {
                expected: self.m1() * self.m2(),
                found: data.m1() * data.m2(),
            });
        }
        Ok(())
    }

    fn solve_row(&self, side: Side, j: usize, data: &ObservedMatrix) -> RowFactor {
        let k = self.rank();
        let n = data.n().max(1) as f64;
        let coeff = 2.0 * self.lambda / n;
        let mut precision = DMatrix::from_diagonal(&DVector::from_iterator(
            k,
            self.gamma.iter().map(InverseGammaFactor::mean_inverse),
        ));
        let mut rhs = DVector::zeros(k);
        for &(r, c, y) in data.entries() {
            let other = match side {
                Side::U if r == j => &self.v[c],
                Side::V if c == j => &self.u[r],
                _ => continue,
            };
            precision += other.second_moment() * coeff;
            rhs += &other.mean * (coeff * y);
        }
        let chol = precision
            .cholesky()
            .expect("precision is a sum of positive definite terms");
        let cov = chol.inverse();
        let cov = (&cov + cov.transpose()) * 0.5;
        let mean = chol.solve(&rhs);
        RowFactor { mean, cov }
    }

    /// Gaussian fixed point for row `j` of `U`, with precision
    /// `diag(E[1/γ]) + (2λ/n) Σ E[V_cᵀV_c]` and mean
    /// `P⁻¹ (2λ/n) Σ Y E[V_c]` over the observed entries of the row.
    pub fn update_row_u(&mut self, j: usize, data: &ObservedMatrix) -> Result<()> {
        self.check(data)?;
        if j >= self.m1() {
            return Err(config(format!("row {j} out of range")));
        }
        self.u[j] = self.solve_row(Side::U, j, data);
        Ok(())
    }

    pub fn update_row_v(&mut self, i: usize, data: &ObservedMatrix) -> Result<()> {
        self.check(data)?;
        if i >= self.m2() {
            return Err(config(format!("row {i} out of range")));
        }
        self.v[i] = self.solve_row(Side::V, i, data);
        Ok(())
    }

    /// `IΓ(a + (m1+m2)/2, b + ½(Σ_j E[U²_{jk}] + Σ_i E[V²_{ik}]))`.
    pub fn update_gamma(&mut self, k: usize) -> Result<()> {
        if k >= self.rank() {
            return Err(config(format!("factor {k} out of range")));
        }
        let second = |f: &RowFactor| f.mean[k] * f.mean[k] + f.cov[(k, k)];
        let sum: f64 = self.u.iter().map(second).sum::<f64>() + self.v.iter().map(second).sum::<f64>();
        self.gamma[k] = InverseGammaFactor {
            shape: self.a + 0.5 * (self.m1() + self.m2()) as f64,
            rate: self.b + 0.5 * sum,
        };
        Ok(())
    }

    /// One cyclic sweep. Rows within a block are updated in parallel, which
    /// is exact because they do not interact given the other block.
    pub fn sweep(&mut self, data: &ObservedMatrix) -> Result<()> {
        self.check(data)?;
        let u: Vec<RowFactor> = (0..self.m1())
            .into_par_iter()
            .map(|j| self.solve_row(Side::U, j, data))
            .collect();
        self.u = u;
        let v: Vec<RowFactor> = (0..self.m2())
            .into_par_iter()
            .map(|i| self.solve_row(Side::V, i, data))
            .collect();
        self.v = v;
        for k in 0..self.rank() {
            self.update_gamma(k)?;
        }
        Ok(())
    }

    /// Evidence lower bound of the tempered model, with the data term's
    /// additive constant set to 0.
    pub fn elbo(&self, data: &ObservedMatrix) -> Result<f64> {
        self.check(data)?;
        let n = data.n().max(1) as f64;
        let su: Vec<DMatrix<f64>> = self.u.iter().map(RowFactor::second_moment).collect();
        let sv: Vec<DMatrix<f64>> = self.v.iter().map(RowFactor::second_moment).collect();
        let mut sq = 0.0;
        for &(r, c, y) in data.entries() {
            let cross = self.u[r].mean.dot(&self.v[c].mean);
            let quad = su[r].component_mul(&sv[c]).sum();
            sq += y * y - 2.0 * y * cross + quad;
        }
        let mut total = -self.lambda / n * sq;

        let log_2pi = (2.0 * std::f64::consts::PI).ln();
        let e_log: Vec<f64> = self.gamma.iter().map(InverseGammaFactor::mean_log).collect();
        let e_inv: Vec<f64> = self.gamma.iter().map(InverseGammaFactor::mean_inverse).collect();
        for (s, row) in su.iter().chain(&sv).zip(self.u.iter().chain(&self.v)) {
            for k in 0..self.rank() {
                total += -0.5 * (log_2pi + e_log[k]) - 0.5 * e_inv[k] * s[(k, k)];
            }
            total += row.entropy();
        }
        for (g, (el, ei)) in self.gamma.iter().zip(e_log.iter().zip(&e_inv)) {
            total += self.a * self.b.ln() - ln_gamma(self.a) - (self.a + 1.0) * el - self.b * ei;
            total += g.entropy();
        }
        Ok(total)
    }

    /// `E[U_row] · E[V_col]`.
    pub fn predict_entry(&self, row: usize, col: usize) -> Result<f64> {
        if row >= self.m1() || col >= self.m2() {
            return Err(Error::IndexOutOfRange {
                row,
                col,
                rows: self.m1(),
                cols: self.m2(),
            });
        }
        Ok(self.u[row].mean.dot(&self.v[col].mean))
    }

    /// Root mean squared prediction error over the given entries.
    pub fn rmse(&self, data: &ObservedMatrix) -> Result<f64> {
        let mut sq = 0.0;
        for &(r, c, y) in data.entries() {
            sq += (self.predict_entry(r, c)? - y).powi(2);
        }
        Ok((sq / data.n().max(1) as f64).sqrt())
    }

    /// Writes `block,index,f1,…,fK` with 1-based indices; block is `u` or `v`.
    pub fn write_factors_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let names: Vec<String> = (1..=self.rank()).map(|k| format!("f{k}")).collect();
        writeln!(w, "block,index,{}", names.join(","))?;
        for (block, rows) in [("u", &self.u), ("v", &self.v)] {
            for (i, row) in rows.iter().enumerate() {
                let vals: Vec<String> = row.mean.iter().map(|x| format!("{x:?}")).collect();
                writeln!(w, "{block},{},{}", i + 1, vals.join(","))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionOutcome {
    pub model: CompletionModel,
    /// ELBO after initialization and after each sweep.
    pub elbo: Vec<f64>,
    pub sweeps: usize,
}

/// Cyclic sweeps until the ELBO changes by less than `tol` or the sweep cap
/// is reached.
pub fn run_mean_field(data: &ObservedMatrix, cfg: &CompletionConfig) -> Result<CompletionOutcome> {
    let mut model = CompletionModel::init(data.m1(), data.m2(), cfg)?;
    let mut trace = vec![model.elbo(data)?];
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        model.sweep(data)?;
        sweeps += 1;
        let value = model.elbo(data)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        let change = value - trace.last().unwrap();
        trace.push(value);
        if change.abs() < cfg.tol {
            break;
        }
    }
    Ok(CompletionOutcome {
        model,
        elbo: trace,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn model(m1: usize, m2: usize, k: usize, lambda: f64) -> CompletionModel {
        CompletionModel::init(
            m1,
            m2,
            &CompletionConfig {
                rank: k,
                lambda,
                ..CompletionConfig::default()
            },
        )
        .unwrap()
    }

    fn random_problem(seed: u64, m1: usize, m2: usize) -> ObservedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for r in 0..m1 {
            for c in 0..m2 {
                if rng.random::<f64>() < 0.6 {
                    entries.push((r, c, rng.sample::<f64, _>(StandardNormal)));
                }
            }
        }
        ObservedMatrix::new(entries, m1, m2).unwrap()
    }

    #[test]
    fn empty_row_update_returns_prior_term() {
        let data = ObservedMatrix::new(vec![(1, 0, 2.0)], 2, 1).unwrap();
        let mut m = model(2, 1, 2, 5.0);
        m.gamma[0] = InverseGammaFactor { shape: 2.0, rate: 1.0 };
        m.update_row_u(0, &data).unwrap();
        assert_eq!(m.u[0].mean, DVector::zeros(2));
        assert!((m.u[0].cov[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((m.u[0].cov[(1, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(m.u[0].cov[(0, 1)], 0.0);
    }

    #[test]
    fn single_observation_closed_form() {
        // K = 1 with a point-mass V: E[V] = v, E[V²] = v²
        let (y, v, g, lambda) = (1.5, 0.8, 2.0, 3.0);
        let data = ObservedMatrix::new(vec![(0, 0, y)], 1, 1).unwrap();
        let mut m = model(1, 1, 1, lambda);
        m.gamma[0] = InverseGammaFactor { shape: g, rate: 1.0 };
        m.v[0] = RowFactor {
            mean: DVector::from_element(1, v),
            cov: DMatrix::zeros(1, 1),
        };
        m.update_row_u(0, &data).unwrap();
        let var = 1.0 / (g + 2.0 * lambda * v * v);
        assert!((m.u[0].cov[(0, 0)] - var).abs() < 1e-15);
        assert!((m.u[0].mean[0] - 2.0 * lambda * y * v * var).abs() < 1e-15);

        // symmetric update of V against a point-mass U
        m.u[0] = RowFactor {
            mean: DVector::from_element(1, v),
            cov: DMatrix::zeros(1, 1),
        };
        m.update_row_v(0, &data).unwrap();
        assert!((m.v[0].cov[(0, 0)] - var).abs() < 1e-15);
        assert!((m.v[0].mean[0] - 2.0 * lambda * y * v * var).abs() < 1e-15);
    }

    #[test]
    fn gamma_update_examples() {
        let mut m = model(1, 1, 1, 1.0);
        // E[U²] = E[V²] = 1
        m.u[0] = RowFactor {
            mean: DVector::zeros(1),
            cov: DMatrix::identity(1, 1),
        };
        m.v[0] = m.u[0].clone();
        m.update_gamma(0).unwrap();
        assert_eq!(m.gamma[0], InverseGammaFactor { shape: 2.0, rate: 2.0 });
        assert_eq!(m.gamma[0].mean_inverse(), 1.0);

        let mut tiny = m.clone();
        for f in tiny.u.iter_mut().chain(tiny.v.iter_mut()) {
            f.cov *= 0.0;
        }
        tiny.update_gamma(0).unwrap();
        assert_eq!(tiny.gamma[0], InverseGammaFactor { shape: 2.0, rate: 1.0 });

        let mut big = m.clone();
        big.u[0].mean[0] = 3.0;
        big.update_gamma(0).unwrap();
        assert!(big.gamma[0].mean_inverse() < m.gamma[0].mean_inverse());
    }

    #[test]
    fn prediction_examples() {
        let mut m = model(1, 1, 1, 1.0);
        m.u[0].mean[0] = 0.0;
        assert_eq!(m.predict_entry(0, 0).unwrap(), 0.0);
        m.u[0].mean[0] = 2.0;
        m.v[0].mean[0] = 3.0;
        assert_eq!(m.predict_entry(0, 0).unwrap(), 6.0);
        assert!(matches!(m.predict_entry(1, 0), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn every_single_update_increases_the_elbo() {
        let data = random_problem(3, 5, 4);
        let mut m = model(5, 4, 3, 10.0);
        let mut last = m.elbo(&data).unwrap();
        for _ in 0..20 {
            for j in 0..5 {
                m.update_row_u(j, &data).unwrap();
                let e = m.elbo(&data).unwrap();
                assert!(e >= last - 1e-8, "u{j}: {e} < {last}");
                last = e;
            }
            for i in 0..4 {
                m.update_row_v(i, &data).unwrap();
                let e = m.elbo(&data).unwrap();
                assert!(e >= last - 1e-8, "v{i}: {e} < {last}");
                last = e;
            }
            for k in 0..3 {
                m.update_gamma(k).unwrap();
                let e = m.elbo(&data).unwrap();
                assert!(e >= last - 1e-8, "gamma{k}: {e} < {last}");
                last = e;
            }
        }
    }

    #[test]
    fn zero_temperature_predicts_zero() {
        let data = random_problem(4, 4, 4);
        let out = run_mean_field(
            &data,
            &CompletionConfig {
                lambda: 0.0,
                rank: 2,
                ..CompletionConfig::default()
            },
        )
        .unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert!(out.model.predict_entry(r, c).unwrap().abs() < 1e-15);
            }
        }
    }

    #[test]
    fn noiseless_rank_one_two_by_two() {
        let u = [1.0, -0.5];
        let v = [0.8, 1.2];
        let mut entries = Vec::new();
        for (r, ur) in u.iter().enumerate() {
            for (c, vc) in v.iter().enumerate() {
                entries.push((r, c, ur * vc));
            }
        }
        let data = ObservedMatrix::new(entries, 2, 2).unwrap();
        let out = run_mean_field(
            &data,
            &CompletionConfig {
                rank: 2,
                lambda: 1e4,
                max_sweeps: 100,
                tol: 0.0,
                seed: 1,
                ..CompletionConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.sweeps, 100);
        assert!(out.model.rmse(&data).unwrap() < 1e-2);
    }

    #[test]
    fn factor_permutation_leaves_predictions_unchanged() {
        let data = random_problem(5, 4, 3);
        let out = run_mean_field(
            &data,
            &CompletionConfig {
                rank: 3,
                lambda: 5.0,
                max_sweeps: 10,
                ..CompletionConfig::default()
            },
        )
        .unwrap();
        let m = &out.model;
        let perm = [2, 0, 1];
        let mut p = m.clone();
        for (dst, src) in p.u.iter_mut().chain(p.v.iter_mut()).zip(m.u.iter().chain(&m.v)) {
            dst.mean = DVector::from_fn(3, |k, _| src.mean[perm[k]]);
            dst.cov = DMatrix::from_fn(3, 3, |a, b| src.cov[(perm[a], perm[b])]);
        }
        p.gamma = perm.iter().map(|&k| m.gamma[k]).collect();
        for r in 0..4 {
            for c in 0..3 {
                let a = m.predict_entry(r, c).unwrap();
                let b = p.predict_entry(r, c).unwrap();
                // the dot product sums the same products in a different order
                assert!((a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn b_rule_helper() {
        let b = b_upper_limit(1.0, 10, 20, 3);
        assert!((b - 1.0 / (40.0 * 120f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn factor_csv_layout() {
        let m = model(2, 3, 2, 1.0);
        let file = tempfile::NamedTempFile::new().unwrap();
        m.write_factors_csv(file.path()).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "block,index,f1,f2");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("u,1,") && lines[3].starts_with("v,1,"));
    }
}
