//! Fitting pipelines, cross-validation over `(λ, ϑ²)` grids and the
//! repeated holdout protocol used to compare methods.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{empirical_bound, recommended_lambda, BoundReport, LambdaRule};
use crate::data::{holdout_split, split_folds, FeatureScaler, LabeledDataset};
use crate::error::{config, Result};
use crate::measure::{Family, GaussianMeasure, IsotropicPrior};
use crate::optim::{anneal, convex_solve_hinge, sgd_rank, AnnealSchedule, Certificate, ConvexConfig, HingeFamily, SgdConfig};
use crate::risk::{auc_misorder_fraction, empirical_01_risk, RiskKind};
use crate::smc::{run_tempering_smc_on, SmcConfig, StageDiagnostics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Annealed variational fit of the 0-1 risk.
    Classify01 {
        family: Family,
        anneal_steps: usize,
        budget: usize,
    },
    /// Certified convex fit of the hinge risk.
    Hinge {
        family: HingeFamily,
        iterations: usize,
        radius: Option<f64>,
    },
    /// Stochastic fit of the ranking risk.
    Rank { sgd: SgdConfig },
    /// Tempering SMC on the 0-1 risk; predicts with the weighted mean.
    Smc { smc: SmcConfig },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Classify01 { .. } => "classify01",
            Method::Hinge { .. } => "hinge",
            Method::Rank { .. } => "rank",
            Method::Smc { .. } => "smc",
        }
    }

    fn risk(&self) -> RiskKind {
        match self {
            Method::Classify01 { .. } | Method::Smc { .. } => RiskKind::ZeroOne,
            Method::Hinge { .. } => RiskKind::Hinge,
            Method::Rank { .. } => RiskKind::Auc,
        }
    }

    fn lambda_rule(&self) -> LambdaRule {
        match self {
            Method::Classify01 { .. } | Method::Smc { .. } => LambdaRule::Classif01,
            Method::Hinge { .. } => LambdaRule::Hinge,
            Method::Rank { .. } => LambdaRule::Rank01,
        }
    }

    /// The recommended temperature for this method on `train`.
    pub fn recommended_lambda(&self, train: &LabeledDataset, prior_variance: f64) -> Result<f64> {
        recommended_lambda(
            self.lambda_rule(),
            train.n(),
            train.d(),
            prior_variance,
            train.feature_bound(),
            0.0,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fitted {
    /// Linear score vector used for prediction.
    pub theta: Vec<f64>,
    pub measure: Option<GaussianMeasure>,
    pub bound: Option<BoundReport>,
    pub trace: Vec<BoundReport>,
    pub certificate: Option<Certificate>,
    pub log_z: Option<f64>,
    pub stages: Vec<StageDiagnostics>,
}

/// Fits `method` on `train` at temperature `λ` and prior variance `ϑ²`.
pub fn fit(method: &Method, train: &LabeledDataset, lambda: f64, prior_variance: f64, epsilon: f64) -> Result<Fitted> {
    let prior = IsotropicPrior::new(prior_variance, train.d())?;
    let empty = |theta: Vec<f64>| Fitted {
        theta,
        measure: None,
        bound: None,
        trace: Vec::new(),
        certificate: None,
        log_z: None,
        stages: Vec::new(),
    };
    match *method {
        Method::Classify01 {
            family,
            anneal_steps,
            budget,
        } => {
            let schedule = AnnealSchedule::geometric(lambda, anneal_steps, budget)?;
            let out = anneal(RiskKind::ZeroOne, family, train, &prior, &schedule, epsilon)?;
            Ok(Fitted {
                measure: Some(out.best.clone()),
                bound: Some(out.best_bound),
                trace: out.trace,
                ..empty(out.best.mean().to_vec())
            })
        }
        Method::Hinge {
            family,
            iterations,
            radius,
        } => {
            let cfg = ConvexConfig {
                radius,
                ..ConvexConfig::default()
            };
            let (q, cert) = convex_solve_hinge(train, &prior, lambda, family, iterations, &cfg)?;
            let bound = empirical_bound(RiskKind::Hinge, &q, train, &prior, lambda, epsilon)?;
            Ok(Fitted {
                measure: Some(q.clone()),
                bound: Some(bound),
                certificate: Some(cert),
                ..empty(q.mean().to_vec())
            })
        }
        Method::Rank { sgd } => {
            let cfg = SgdConfig { epsilon, ..sgd };
            let out = sgd_rank(train, &prior, lambda, &cfg)?;
            Ok(Fitted {
                measure: Some(out.measure.clone()),
                bound: out.trace.last().map(|p| p.report.clone()),
                trace: out.trace.into_iter().map(|p| p.report).collect(),
                ..empty(out.measure.mean().to_vec())
            })
        }
        Method::Smc { smc } => {
            let (cloud, stages) = run_tempering_smc_on(train, &prior, lambda, RiskKind::ZeroOne, &smc)?;
            Ok(Fitted {
                log_z: Some(cloud.log_z()),
                stages,
                ..empty(cloud.weighted_mean())
            })
        }
    }
}

/// Misclassification rate for the classifiers, misordered mixed-pair
/// fraction for ranking.
pub fn evaluation_error(method: &Method, theta: &[f64], ds: &LabeledDataset) -> Result<f64> {
    match method.risk() {
        RiskKind::Auc => auc_misorder_fraction(theta, ds),
        _ => empirical_01_risk(theta, ds),
    }
}

/// Temperatures to search, either as given or as multiples of the method's
/// recommended value on each training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum LambdaGrid {
    Absolute(Vec<f64>),
    Relative(Vec<f64>),
}

impl LambdaGrid {
    fn values(&self) -> &[f64] {
        match self {
            LambdaGrid::Absolute(v) | LambdaGrid::Relative(v) => v,
        }
    }

    fn resolve(&self, value: f64, method: &Method, train: &LabeledDataset, prior_variance: f64) -> Result<f64> {
        match self {
            LambdaGrid::Absolute(_) => Ok(value),
            LambdaGrid::Relative(_) => Ok(value * method.recommended_lambda(train, prior_variance)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    /// Grid value; a multiplier for relative grids.
    pub lambda: f64,
    pub prior_variance: f64,
    pub fold_errors: Vec<f64>,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub cells: Vec<CvCell>,
    pub best: usize,
}

impl CvResult {
    pub fn best_cell(&self) -> &CvCell {
        &self.cells[self.best]
    }

    /// Writes `lambda,prior_variance,mean_error,fold_1,…`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let folds = self.cells.first().map_or(0, |c| c.fold_errors.len());
        let names: Vec<String> = (1..=folds).map(|f| format!("fold_{f}")).collect();
        writeln!(w, "lambda,prior_variance,mean_error,{}", names.join(","))?;
        for c in &self.cells {
            let errs: Vec<String> = c.fold_errors.iter().map(f64::to_string).collect();
            writeln!(w, "{},{},{},{}", c.lambda, c.prior_variance, c.mean_error, errs.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `k`-fold cross-validation over the product grid; the best cell has the
/// smallest mean validation error, with ties going to the earliest cell.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    method: &Method,
    ds: &LabeledDataset,
    lambdas: &LambdaGrid,
    prior_variances: &[f64],
    folds: usize,
    seed: u64,
    epsilon: f64,
) -> Result<CvResult> {
    if lambdas.values().is_empty() || prior_variances.is_empty() {
        return Err(config("empty hyperparameter grid"));
    }
    let splits = split_folds(ds.n(), folds, seed)?;
    let parts: Vec<(LabeledDataset, LabeledDataset)> = splits
        .iter()
        .map(|f| Ok((ds.subset(&f.train)?, ds.subset(&f.test)?)))
        .collect::<Result<_>>()?;
    let grid: Vec<(f64, f64)> = prior_variances
        .iter()
        .flat_map(|&v| lambdas.values().iter().map(move |&l| (l, v)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let errors: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (value, prior_variance) = grid[c];
            let (train, test) = &parts[f];
            let lambda = lambdas.resolve(value, method, train, prior_variance)?;
            let fitted = fit(method, train, lambda, prior_variance, epsilon)?;
            evaluation_error(method, &fitted.theta, test)
        })
        .collect::<Result<_>>()?;
    let cells: Vec<CvCell> = grid
        .iter()
        .enumerate()
        .map(|(c, &(lambda, prior_variance))| {
            let fold_errors = errors[c * folds..(c + 1) * folds].to_vec();
            let mean_error = fold_errors.iter().sum::<f64>() / folds as f64;
            CvCell {
                lambda,
                prior_variance,
                fold_errors,
                mean_error,
            }
        })
        .collect();
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.mean_error < cells[best].mean_error {
            best = i;
        }
    }
    Ok(CvResult { cells, best })
}

/// Scales features by the training set's column maxima, then appends an
/// intercept column to both sets.
pub fn prepare(train: &LabeledDataset, test: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset)> {
    let scaler = FeatureScaler::fit(train);
    Ok((
        scaler.apply(train)?.with_intercept(),
        scaler.apply(test)?.with_intercept(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub folds: usize,
    pub lambdas: LambdaGrid,
    pub prior_variances: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub lambda: f64,
    pub prior_variance: f64,
    pub cv_error: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub runs: Vec<SeedResult>,
    pub mean_test_error: f64,
}

/// For each seed: holdout split, preparation, cross-validation on the
/// training part, refit at the selected cell and test error.
pub fn run_protocol(method: &Method, raw: &LabeledDataset, cfg: &ProtocolConfig) -> Result<ProtocolOutcome> {
    if cfg.seeds.is_empty() {
        return Err(config("protocol needs at least one seed"));
    }
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let split = holdout_split(raw.n(), cfg.test_fraction, seed)?;
        let (train, test) = prepare(&raw.subset(&split.train)?, &raw.subset(&split.test)?)?;
        let cv = cross_validate(method, &train, &cfg.lambdas, &cfg.prior_variances, cfg.folds, seed, cfg.epsilon)?;
        let best = cv.best_cell();
        let lambda = cfg.lambdas.resolve(best.lambda, method, &train, best.prior_variance)?;
        let fitted = fit(method, &train, lambda, best.prior_variance, cfg.epsilon)?;
        runs.push(SeedResult {
            seed,
            lambda,
            prior_variance: best.prior_variance,
            cv_error: best.mean_error,
            test_error: evaluation_error(method, &fitted.theta, &test)?,
        });
    }
    let mean_test_error = runs.iter().map(|r| r.test_error).sum::<f64>() / runs.len() as f64;
    Ok(ProtocolOutcome {
        runs,
        mean_test_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(seed: u64, n: usize) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            labels.push(if x[0] - 0.5 * x[1] > 0.0 { 1.0 } else { -1.0 });
            feats.extend(x);
        }
        LabeledDataset::new(feats, labels, 2).unwrap()
    }

    fn diag01() -> Method {
        Method::Classify01 {
            family: Family::Diagonal,
            anneal_steps: 4,
            budget: 30,
        }
    }

    #[test]
    fn empty_grid_is_rejected() {
        let ds = separable(1, 30);
        assert!(cross_validate(&diag01(), &ds, &LambdaGrid::Absolute(vec![]), &[1.0], 3, 0, 0.05).is_err());
        assert!(cross_validate(&diag01(), &ds, &LambdaGrid::Absolute(vec![1.0]), &[], 3, 0, 0.05).is_err());
    }

    #[test]
    fn single_point_grid_is_selected() {
        let ds = separable(2, 30);
        let cv = cross_validate(&diag01(), &ds, &LambdaGrid::Absolute(vec![7.0]), &[2.0], 3, 0, 0.05).unwrap();
        assert_eq!(cv.cells.len(), 1);
        assert_eq!((cv.best_cell().lambda, cv.best_cell().prior_variance), (7.0, 2.0));
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let ds = separable(3, 40);
        let grid = LambdaGrid::Relative(vec![0.5, 1.0, 2.0]);
        let a = cross_validate(&diag01(), &ds, &grid, &[1.0, 10.0], 4, 9, 0.05).unwrap();
        let b = cross_validate(&diag01(), &ds, &grid, &[1.0, 10.0], 4, 9, 0.05).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 6);
    }

    #[test]
    fn selected_cell_is_close_to_the_oracle() {
        // near-zero temperature barely moves from the prior, so it cannot
        // classify; the grid also holds reasonable temperatures
        let ds = separable(4, 80);
        let grid = LambdaGrid::Absolute(vec![1e-3, 20.0, 80.0]);
        let cv = cross_validate(&diag01(), &ds, &grid, &[1.0], 4, 1, 0.05).unwrap();
        let oracle = cv.cells.iter().map(|c| c.mean_error).fold(f64::INFINITY, f64::min);
        assert_eq!(cv.best_cell().mean_error, oracle);
        assert!(cv.best_cell().lambda > 1e-3);
    }

    #[test]
    fn cv_csv_layout() {
        let ds = separable(5, 24);
        let cv = cross_validate(&diag01(), &ds, &LambdaGrid::Absolute(vec![5.0, 10.0]), &[1.0], 3, 0, 0.05).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        cv.write_csv(file.path()).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "lambda,prior_variance,mean_error,fold_1,fold_2,fold_3");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn prepare_scales_and_adds_intercept() {
        let train = LabeledDataset::new(vec![2.0, -4.0, 1.0, 2.0], vec![1.0, -1.0], 2).unwrap();
        let test = LabeledDataset::new(vec![4.0, 1.0, 0.0, 0.0], vec![1.0, -1.0], 2).unwrap();
        let (a, b) = prepare(&train, &test).unwrap();
        assert_eq!(a.row(0), &[1.0, -1.0, 1.0]);
        assert_eq!(b.row(0), &[2.0, 0.25, 1.0]);
    }
}
