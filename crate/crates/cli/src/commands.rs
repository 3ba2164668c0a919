use std::io::Write;
use std::path::{Path, PathBuf};

use pacvb_core::bounds::BoundReport;
use pacvb_core::completion::{b_upper_limit, run_mean_field, CompletionConfig};
use pacvb_core::data::{holdout_split, load_csv, load_entries_csv, FeatureScaler, LabeledDataset};
use pacvb_core::experiment::{self, cross_validate, evaluation_error, CvCell, LambdaGrid, Method};
use pacvb_core::measure::{Family, GaussianMeasure};
use pacvb_core::optim::{Certificate, HingeFamily, SgdConfig};
use pacvb_core::smc::{write_diagnostics_csv, SmcConfig};
use serde::Serialize;

use crate::{CompleteArgs, CvArgs, DataArgs, Failure, FitArgs, MethodArgs, MethodKind, SmcArgs};

type Outcome<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn kind_name(kind: MethodKind) -> &'static str {
    match kind {
        MethodKind::Classify01 => "classify01",
        MethodKind::Hinge => "hinge",
        MethodKind::Rank => "rank",
        MethodKind::Smc => "smc",
    }
}

/// Builds the method, rejecting options that belong to another method.
pub fn build_method(kind: MethodKind, m: &MethodArgs, seed: u64, epsilon: f64) -> Outcome<Method> {
    let allowed: &[&str] = match kind {
        MethodKind::Classify01 => &["family", "anneal-steps", "budget"],
        MethodKind::Hinge => &["family", "iterations", "radius"],
        MethodKind::Rank => &["family", "batch-size", "max-iter"],
        MethodKind::Smc => &["particles", "tau", "kappa", "moves"],
    };
    let given = [
        ("family", m.family.is_some()),
        ("anneal-steps", m.anneal_steps.is_some()),
        ("budget", m.budget.is_some()),
        ("iterations", m.iterations.is_some()),
        ("radius", m.radius.is_some()),
        ("batch-size", m.batch_size.is_some()),
        ("max-iter", m.max_iter.is_some()),
        ("particles", m.particles.is_some()),
        ("tau", m.tau.is_some()),
        ("kappa", m.kappa.is_some()),
        ("moves", m.moves.is_some()),
    ];
    for (name, set) in given {
        if set && !allowed.contains(&name) {
            return Err(usage(format!("--{name} does not apply to {}", kind_name(kind))));
        }
    }
    let family = |default: Family| -> Outcome<Family> {
        Ok(match &m.family {
            Some(f) => f.parse()?,
            None => default,
        })
    };
    Ok(match kind {
        MethodKind::Classify01 => Method::Classify01 {
            family: family(Family::Full)?,
            anneal_steps: m.anneal_steps.unwrap_or(10),
            budget: m.budget.unwrap_or(100),
        },
        MethodKind::Hinge => Method::Hinge {
            family: match m.family.as_deref() {
                Some("fixed") => HingeFamily::FixedVariance,
                _ => HingeFamily::from_family(family(Family::Full)?),
            },
            iterations: m.iterations.unwrap_or(2000),
            radius: m.radius,
        },
        MethodKind::Rank => {
            if family(Family::Diagonal)? != Family::Diagonal {
                return Err(usage("rank fits the diagonal family only"));
            }
            let base = SgdConfig::default();
            Method::Rank {
                sgd: SgdConfig {
                    batch_size: m.batch_size.unwrap_or(base.batch_size),
                    max_iter: m.max_iter.unwrap_or(base.max_iter),
                    seed,
                    epsilon,
                    ..base
                },
            }
        }
        MethodKind::Smc => {
            let base = SmcConfig::default();
            Method::Smc {
                smc: SmcConfig {
                    particles: m.particles.unwrap_or(base.particles),
                    tau: m.tau.unwrap_or(base.tau),
                    kappa: m.kappa.unwrap_or(base.kappa),
                    moves: m.moves.unwrap_or(base.moves),
                    seed,
                },
            }
        }
    })
}

struct Split {
    train: LabeledDataset,
    test: Option<LabeledDataset>,
}

fn load_split(a: &DataArgs, seed: u64) -> Outcome<Split> {
    let raw = load_csv(&a.data, &a.label_column, &a.positive_label)?;
    let (mut train, mut test) = match (&a.test_data, a.holdout) {
        (Some(path), _) => (raw, Some(load_csv(path, &a.label_column, &a.positive_label)?)),
        (None, Some(h)) => {
            let fold = holdout_split(raw.n(), h, seed)?;
            (raw.subset(&fold.train)?, Some(raw.subset(&fold.test)?))
        }
        (None, None) => (raw, None),
    };
    if let Some(t) = &test {
        t.check_dim(train.d())?;
    }
    if a.scale {
        let scaler = FeatureScaler::fit(&train);
        train = scaler.apply(&train)?;
        test = test.map(|t| scaler.apply(&t)).transpose()?;
    }
    if a.intercept {
        train = train.with_intercept();
        test = test.map(|t| t.with_intercept());
    }
    Ok(Split { train, test })
}

fn resolve_lambda(text: &str, method: &Method, train: &LabeledDataset, prior_variance: f64) -> Outcome<f64> {
    if text == "auto" {
        return Ok(method.recommended_lambda(train, prior_variance)?);
    }
    text.parse()
        .map_err(|_| usage(format!("--lambda expects a number or \"auto\", got {text:?}")))
}

fn sibling(out: &Option<PathBuf>, explicit: &Option<PathBuf>, suffix: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| out.as_ref().map(|o| o.with_extension(suffix)))
}

fn emit<T: Serialize>(report: &T, out: &Option<PathBuf>) -> Outcome<()> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(pacvb_core::Error::from)?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(pacvb_core::Error::from)?,
    }
    Ok(())
}

fn write_trace(trace: &[BoundReport], path: &Path) -> Outcome<()> {
    let mut text = String::from("iteration,lambda,expected_risk,kl,bound\n");
    for (k, r) in trace.iter().enumerate() {
        text.push_str(&format!("{k},{},{},{},{}\n", r.lambda, r.expected_empirical_risk, r.kl, r.bound));
    }
    std::fs::write(path, text).map_err(pacvb_core::Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct FitReport<'a> {
    command: &'static str,
    config: &'a FitArgs,
    method: Method,
    lambda: f64,
    prior_variance: f64,
    n_train: usize,
    n_test: Option<usize>,
    d: usize,
    theta: Vec<f64>,
    measure: Option<GaussianMeasure>,
    train_error: f64,
    test_error: Option<f64>,
    bound: Option<BoundReport>,
    certificate: Option<Certificate>,
    trace_csv: Option<PathBuf>,
}

pub fn fit(a: &FitArgs) -> Outcome<()> {
    let method = build_method(a.kind.into(), &a.method, a.seed, a.epsilon)?;
    let split = load_split(&a.data, a.seed)?;
    let lambda = resolve_lambda(&a.lambda, &method, &split.train, a.prior_var)?;
    let fitted = experiment::fit(&method, &split.train, lambda, a.prior_var, a.epsilon)?;
    let trace_csv = sibling(&a.out, &a.trace, "trace.csv");
    if let Some(path) = &trace_csv {
        write_trace(&fitted.trace, path)?;
    }
    let test_error = match &split.test {
        Some(t) => Some(evaluation_error(&method, &fitted.theta, t)?),
        None => None,
    };
    let report = FitReport {
        command: "fit",
        config: a,
        method,
        lambda,
        prior_variance: a.prior_var,
        n_train: split.train.n(),
        n_test: split.test.as_ref().map(LabeledDataset::n),
        d: split.train.d(),
        train_error: evaluation_error(&method, &fitted.theta, &split.train)?,
        test_error,
        theta: fitted.theta,
        measure: fitted.measure,
        bound: fitted.bound,
        certificate: fitted.certificate,
        trace_csv,
    };
    emit(&report, &a.out)
}

#[derive(Serialize)]
struct SmcReport<'a> {
    command: &'static str,
    config: &'a SmcArgs,
    method: Method,
    lambda: f64,
    prior_variance: f64,
    n_train: usize,
    n_test: Option<usize>,
    d: usize,
    stages: usize,
    ladder: Vec<f64>,
    log_z: Option<f64>,
    theta: Vec<f64>,
    train_error: f64,
    test_error: Option<f64>,
    diagnostics_csv: Option<PathBuf>,
}

pub fn smc(a: &SmcArgs) -> Outcome<()> {
    let method = build_method(MethodKind::Smc, &a.method, a.seed, 0.05)?;
    let split = load_split(&a.data, a.seed)?;
    let lambda = resolve_lambda(&a.lambda, &method, &split.train, a.prior_var)?;
    let fitted = experiment::fit(&method, &split.train, lambda, a.prior_var, 0.05)?;
    let diagnostics_csv = sibling(&a.out, &a.diagnostics, "stages.csv");
    if let Some(path) = &diagnostics_csv {
        write_diagnostics_csv(&fitted.stages, path)?;
    }
    let test_error = match &split.test {
        Some(t) => Some(evaluation_error(&method, &fitted.theta, t)?),
        None => None,
    };
    let report = SmcReport {
        command: "smc",
        config: a,
        method,
        lambda,
        prior_variance: a.prior_var,
        n_train: split.train.n(),
        n_test: split.test.as_ref().map(LabeledDataset::n),
        d: split.train.d(),
        stages: fitted.stages.len(),
        ladder: fitted.stages.iter().map(|s| s.lambda).collect(),
        log_z: fitted.log_z,
        train_error: evaluation_error(&method, &fitted.theta, &split.train)?,
        test_error,
        theta: fitted.theta,
        diagnostics_csv,
    };
    emit(&report, &a.out)
}

#[derive(Serialize)]
struct CompleteReport<'a> {
    command: &'static str,
    config: &'a CompleteArgs,
    rows: usize,
    cols: usize,
    n_train: usize,
    n_test: Option<usize>,
    b: f64,
    b_limit: Option<f64>,
    sweeps: usize,
    elbo: f64,
    train_rmse: f64,
    test_rmse: Option<f64>,
    factors_csv: Option<PathBuf>,
}

pub fn complete(a: &CompleteArgs) -> Outcome<()> {
    let dims = match (a.rows, a.cols) {
        (Some(r), Some(c)) => Some((r, c)),
        (None, None) => None,
        _ => return Err(usage("--rows and --cols must be given together")),
    };
    let all = load_entries_csv(&a.entries, dims)?;
    let (train, test) = match (&a.test_entries, a.holdout) {
        (Some(path), _) => {
            let test = load_entries_csv(path, Some((all.m1(), all.m2())))?;
            (all, Some(test))
        }
        (None, Some(h)) => {
            let fold = holdout_split(all.n(), h, a.seed)?;
            (all.select(&fold.train), Some(all.select(&fold.test)))
        }
        (None, None) => (all, None),
    };
    let (b, b_limit) = if a.b == "auto" {
        let beta = a.beta.unwrap_or(train.n() as f64);
        let limit = b_upper_limit(beta, train.m1(), train.m2(), a.rank);
        (limit, Some(limit))
    } else {
        if a.beta.is_some() {
            return Err(usage("--beta only applies with --b auto"));
        }
        let b = a
            .b
            .parse()
            .map_err(|_| usage(format!("--b expects a number or \"auto\", got {:?}", a.b)))?;
        (b, None)
    };
    let cfg = CompletionConfig {
        rank: a.rank,
        a: a.a,
        b,
        lambda: a.lambda,
        tol: a.tol,
        max_sweeps: a.max_sweeps,
        seed: a.seed,
    };
    let out = run_mean_field(&train, &cfg)?;
    if let Some(path) = &a.factors {
        out.model.write_factors_csv(path)?;
    }
    let test_rmse = match &test {
        Some(t) => Some(out.model.rmse(t)?),
        None => None,
    };
    let report = CompleteReport {
        command: "complete",
        config: a,
        rows: train.m1(),
        cols: train.m2(),
        n_train: train.n(),
        n_test: test.as_ref().map(|t| t.n()),
        b,
        b_limit,
        sweeps: out.sweeps,
        elbo: *out.elbo.last().expect("initial elbo is recorded"),
        train_rmse: out.model.rmse(&train)?,
        test_rmse,
        factors_csv: a.factors.clone(),
    };
    emit(&report, &a.out)
}

#[derive(Serialize)]
struct CvReport<'a> {
    command: &'static str,
    config: &'a CvArgs,
    method: Method,
    grid: LambdaGrid,
    cells: Vec<CvCell>,
    best: CvCell,
    /// Temperature of the best cell resolved on the full training set.
    lambda: f64,
    test_error: Option<f64>,
    grid_csv: Option<PathBuf>,
}

pub fn cv(a: &CvArgs) -> Outcome<()> {
    let method = build_method(a.method, &a.options, a.seed, a.epsilon)?;
    let split = load_split(&a.data, a.seed)?;
    let grid = if a.relative {
        LambdaGrid::Relative(a.lambdas.clone())
    } else {
        LambdaGrid::Absolute(a.lambdas.clone())
    };
    let result = cross_validate(&method, &split.train, &grid, &a.prior_vars, a.folds, a.seed, a.epsilon)?;
    let grid_csv = sibling(&a.out, &a.grid, "grid.csv");
    if let Some(path) = &grid_csv {
        result.write_csv(path)?;
    }
    let best = result.best_cell().clone();
    let lambda = if a.relative {
        best.lambda * method.recommended_lambda(&split.train, best.prior_variance)?
    } else {
        best.lambda
    };
    let test_error = match &split.test {
        Some(t) => {
            let fitted = experiment::fit(&method, &split.train, lambda, best.prior_variance, a.epsilon)?;
            Some(evaluation_error(&method, &fitted.theta, t)?)
        }
        None => None,
    };
    let report = CvReport {
        command: "cv",
        config: a,
        method,
        grid,
        cells: result.cells,
        best,
        lambda,
        test_error,
        grid_csv,
    };
    emit(&report, &a.out)
}
