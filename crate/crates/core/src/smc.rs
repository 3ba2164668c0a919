//! Adaptive tempering sequential Monte Carlo for Gibbs posteriors
//! `ρ_λ(dθ) ∝ exp(−λ r(θ)) π(dθ)`, with systematic resampling and Gaussian
//! random-walk Metropolis moves.
//!
//! Every particle draws from its own ChaCha stream keyed by the seed and the
//! stage, so runs are identical regardless of thread count.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{config, Error, Result};
use crate::measure::IsotropicPrior;
use crate::risk::RiskKind;

/// `(Σw)² / Σw²`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let sum: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if !(sum > 0.0) || !sum.is_finite() || !sq.is_finite() {
        return Err(Error::AllZeroWeights);
    }
    Ok(sum * sum / sq)
}

/// ESS of the incremental weights `exp(−δ r_i)`, shifted by the smallest
/// risk so the largest weight is 1.
fn ess_at(risks: &[f64], r_min: f64, delta: f64) -> f64 {
    let (mut sum, mut sq) = (0.0, 0.0);
    for r in risks {
        let w = (-delta * (r - r_min)).exp();
        sum += w;
        sq += w * w;
    }
    sum * sum / sq
}

/// Next temperature of the adaptive ladder: the bisection root of
/// `ESS(λ) = τN` on `(λ_t, λ_max]`, or `λ_max` when the ESS at `λ_max` is
/// still at least `τN`. The bracket is shrunk to a relative width of `1e-8`.
pub fn solve_next_temperature(lambda_t: f64, risks: &[f64], tau: f64, lambda_max: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(config(format!("ESS threshold tau = {tau} must lie in (0, 1)")));
    }
    if !(lambda_max > lambda_t) || !lambda_max.is_finite() {
        return Err(config("lambda_max must be finite and above the current temperature"));
    }
    let r_min = risks.iter().copied().fold(f64::INFINITY, f64::min);
    let target = tau * risks.len() as f64;
    let span = lambda_max - lambda_t;
    if ess_at(risks, r_min, span) >= target {
        return Ok(lambda_max);
    }
    let (mut lo, mut hi) = (0.0, span);
    while hi - lo > 1e-8 * hi {
        let mid = 0.5 * (lo + hi);
        if ess_at(risks, r_min, mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let next = lambda_t + 0.5 * (lo + hi);
    Ok(if next > lambda_t { next } else { lambda_t.next_up() })
}

/// Systematic resampling of normalized weights with the uniform draw `u`.
/// Returns zero-based ancestor indices.
pub fn systematic_resample(weights: &[f64], n: usize, u: f64) -> Vec<usize> {
    let scale = n as f64;
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += scale * w;
        cumulative.push(acc);
    }
    let last = weights.len() - 1;
    let mut out = Vec::with_capacity(n);
    let mut s = u;
    let mut m = 0;
    for _ in 0..n {
        while m < last && cumulative[m] < s {
            m += 1;
        }
        out.push(m);
        s += 1.0;
    }
    out
}

/// Metropolis acceptance for a symmetric proposal, given a uniform `u`.
pub fn metropolis_accept(log_current: f64, log_proposed: f64, u: f64) -> bool {
    log_proposed >= log_current || u.ln() < log_proposed - log_current
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub particles: usize,
    pub tau: f64,
    pub kappa: f64,
    pub moves: usize,
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 1000,
            tau: 0.5,
            kappa: 0.3,
            moves: 5,
            seed: 0,
        }
    }
}

impl SmcConfig {
    fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(config("SMC needs at least two particles"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(config("tau must lie in (0, 1)"));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(config("kappa must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    d: usize,
    particles: Vec<f64>,
    weights: Vec<f64>,
    log_z: f64,
    ladder: Vec<f64>,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.d..(i + 1) * self.d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn temperature(&self) -> f64 {
        *self.ladder.last().expect("ladder starts at 0")
    }

    pub fn ladder(&self) -> &[f64] {
        &self.ladder
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    pub fn weighted_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for (i, w) in self.weights.iter().enumerate() {
            for (m, p) in mean.iter_mut().zip(self.particle(i)) {
                *m += w * p;
            }
        }
        mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub lambda: f64,
    pub ess: f64,
    pub acceptance_rate: f64,
    pub log_z: f64,
}

/// Writes `lambda,ess,acceptance_rate,log_z`, one row per stage. The final
/// stage is a reweighting only and reports an empty acceptance rate.
pub fn write_diagnostics_csv(stages: &[StageDiagnostics], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "lambda,ess,acceptance_rate,log_z")?;
    for s in stages {
        if s.acceptance_rate.is_nan() {
            writeln!(w, "{},{},,{}", s.lambda, s.ess, s.log_z)?;
        } else {
            writeln!(w, "{},{},{},{}", s.lambda, s.ess, s.acceptance_rate, s.log_z)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn stream(seed: u64, stage: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stage.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Lower Cholesky factor of `κ × empirical covariance`, with a diagonal
/// jitter starting at `1e-9` when the covariance is singular.
fn proposal_factor(particles: &[f64], d: usize, kappa: f64) -> DMatrix<f64> {
    let n = particles.len() / d;
    let rows = DMatrix::from_row_slice(n, d, particles);
    let mean = rows.row_mean();
    let mut centered = rows.clone();
    for mut r in centered.row_iter_mut() {
        r -= &mean;
    }
    let cov = (centered.transpose() * &centered) * (kappa / (n as f64 - 1.0).max(1.0));
    if let Some(c) = cov.clone().cholesky() {
        return c.l();
    }
    let mut jitter = 1e-9;
    loop {
        let reg = &cov + DMatrix::<f64>::identity(d, d) * jitter;
        if let Some(c) = reg.cholesky() {
            return c.l();
        }
        jitter *= 10.0;
    }
}

/// Applies `steps` random-walk Metropolis moves targeting
/// `exp(−λ r(θ)) π(θ)` to every particle, with proposal covariance `κ ×` the
/// empirical covariance of the cloud. `risks` is kept in sync with the
/// particles. Returns the acceptance rate.
#[allow(clippy::too_many_arguments)]
pub fn metropolis_move<F>(
    particles: &mut [f64],
    risks: &mut [f64],
    d: usize,
    risk: &F,
    prior: &IsotropicPrior,
    lambda: f64,
    kappa: f64,
    steps: usize,
    seed: u64,
    stage: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(kappa > 0.0) {
        return Err(config("kappa must be positive"));
    }
    if steps == 0 {
        return Ok(f64::NAN);
    }
    let chol = proposal_factor(particles, d, kappa);
    let accepted: usize = particles
        .par_chunks_mut(d)
        .zip(risks.par_iter_mut())
        .enumerate()
        .map(|(i, (theta, r))| {
            let mut rng = stream(seed, stage, i as u64);
            let mut z = vec![0.0; d];
            let mut prop = vec![0.0; d];
            let mut log_cur = -lambda * *r + prior.log_density(theta);
            let mut acc = 0;
            for _ in 0..steps {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                for a in 0..d {
                    prop[a] = theta[a] + (0..=a).map(|b| chol[(a, b)] * z[b]).sum::<f64>();
                }
                let r_prop = risk(&prop);
                let log_prop = -lambda * r_prop + prior.log_density(&prop);
                let u: f64 = rng.random();
                if metropolis_accept(log_cur, log_prop, u) {
                    theta.copy_from_slice(&prop);
                    *r = r_prop;
                    log_cur = log_prop;
                    acc += 1;
                }
            }
            acc
        })
        .sum();
    Ok(accepted as f64 / (steps * risks.len()) as f64)
}

/// Tempering SMC from the prior up to `λ_target` for an arbitrary risk.
pub fn run_tempering_smc<F>(
    risk: &F,
    prior: &IsotropicPrior,
    lambda_target: f64,
    cfg: &SmcConfig,
) -> Result<(ParticleCloud, Vec<StageDiagnostics>)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if !(lambda_target >= 0.0 && lambda_target.is_finite()) {
        return Err(config("target temperature must be finite and nonnegative"));
    }
    let (n, d) = (cfg.particles, prior.d);
    let mut particles = vec![0.0; n * d];
    particles.par_chunks_mut(d).enumerate().for_each(|(i, theta)| {
        prior.sample(&mut stream(cfg.seed, 0, i as u64), theta);
    });
    let mut risks: Vec<f64> = particles.par_chunks(d).map(&risk).collect();
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    let mut ladder = vec![0.0];
    let mut log_z = 0.0;
    let mut weights = vec![1.0 / n as f64; n];
    let mut diagnostics = Vec::new();
    let mut stage = 0u64;

    while *ladder.last().unwrap() < lambda_target {
        stage += 1;
        let current = *ladder.last().unwrap();
        let next = solve_next_temperature(current, &risks, cfg.tau, lambda_target)?;
        let delta = next - current;
        let r_min = risks.iter().copied().fold(f64::INFINITY, f64::min);
        let shifted: Vec<f64> = risks.iter().map(|r| (-delta * (r - r_min)).exp()).collect();
        let sum: f64 = shifted.iter().sum();
        log_z += -delta * r_min + (sum / n as f64).ln();
        weights = shifted.iter().map(|w| w / sum).collect();
        let stage_ess = ess(&weights)?;
        ladder.push(next);
        if next >= lambda_target {
            diagnostics.push(StageDiagnostics {
                lambda: next,
                ess: stage_ess,
                acceptance_rate: f64::NAN,
                log_z,
            });
            break;
        }

        let u: f64 = stream(cfg.seed, stage, u64::MAX).random();
        let ancestors = systematic_resample(&weights, n, u);
        let mut resampled = Vec::with_capacity(n * d);
        for &a in &ancestors {
            resampled.extend_from_slice(&particles[a * d..(a + 1) * d]);
        }
        particles = resampled;
        risks = ancestors.iter().map(|&a| risks[a]).collect();
        weights = vec![1.0 / n as f64; n];

        let rate = metropolis_move(
            &mut particles,
            &mut risks,
            d,
            risk,
            prior,
            next,
            cfg.kappa,
            cfg.moves,
            cfg.seed,
            stage,
        )?;
        diagnostics.push(StageDiagnostics {
            lambda: next,
            ess: stage_ess,
            acceptance_rate: rate,
            log_z,
        });
    }

    Ok((
        ParticleCloud {
            d,
            particles,
            weights,
            log_z,
            ladder,
        },
        diagnostics,
    ))
}

/// Tempering SMC for the empirical risk of a dataset.
pub fn run_tempering_smc_on(
    ds: &LabeledDataset,
    prior: &IsotropicPrior,
    lambda_target: f64,
    kind: RiskKind,
    cfg: &SmcConfig,
) -> Result<(ParticleCloud, Vec<StageDiagnostics>)> {
    ds.check_dim(prior.d)?;
    if kind == RiskKind::Auc {
        let (p, q) = ds.class_counts();
        if p == 0 || q == 0 {
            return Err(Error::NoMixedPairs);
        }
    }
    let risk = |theta: &[f64]| kind.empirical(theta, ds).unwrap_or(f64::NAN);
    run_tempering_smc(&risk, prior, lambda_target, cfg)
}
