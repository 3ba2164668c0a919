mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use pacvb_core::data::LabelColumn;
use pacvb_core::ErrorClass;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "pacvb", version, about = "Variational PAC-Bayes fits, bounds and reference samplers")]
struct Cli {
    /// Worker threads for internal parallelism.
    #[arg(long, global = true, env = "PACVB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a variational approximation and report its bound.
    Fit(FitArgs),
    /// Run the tempering SMC sampler on the 0-1 risk.
    Smc(SmcArgs),
    /// Mean-field matrix completion.
    Complete(CompleteArgs),
    /// Cross-validate a method over a temperature and prior-variance grid.
    Cv(CvArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Classify01,
    Hinge,
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Classify01,
    Hinge,
    Rank,
    Smc,
}

impl From<FitKind> for MethodKind {
    fn from(k: FitKind) -> Self {
        match k {
            FitKind::Classify01 => MethodKind::Classify01,
            FitKind::Hinge => MethodKind::Hinge,
            FitKind::Rank => MethodKind::Rank,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Labeled CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// Label column, by header name or 0-based index.
    #[arg(long)]
    #[serde(serialize_with = "as_display")]
    pub label_column: LabelColumn,
    /// Label value mapped to +1.
    #[arg(long)]
    pub positive_label: String,
    /// Separate test file with the same layout.
    #[arg(long, conflicts_with = "holdout")]
    pub test_data: Option<PathBuf>,
    /// Fraction of rows held out for testing, drawn with --seed.
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Scale each column to [-1, 1] using the training maxima.
    #[arg(long)]
    pub scale: bool,
    /// Append a constant column.
    #[arg(long)]
    pub intercept: bool,
}

/// Method options; each applies only to the methods named in its help.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct MethodArgs {
    /// Variational family: shared, diag or full (hinge also accepts fixed).
    #[arg(long)]
    pub family: Option<String>,
    /// classify01: number of annealing temperatures.
    #[arg(long)]
    pub anneal_steps: Option<usize>,
    /// classify01: local optimizer iterations per temperature.
    #[arg(long)]
    pub budget: Option<usize>,
    /// hinge: solver iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// hinge: radius of the feasible ball.
    #[arg(long)]
    pub radius: Option<f64>,
    /// rank: pairs per minibatch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// rank: iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// smc: number of particles.
    #[arg(long)]
    pub particles: Option<usize>,
    /// smc: ESS fraction targeted at each stage.
    #[arg(long)]
    pub tau: Option<f64>,
    /// smc: random-walk proposal scale.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// smc: Metropolis steps per stage.
    #[arg(long)]
    pub moves: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(value_enum)]
    pub kind: FitKind,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// Temperature, or "auto" for the recommended value.
    #[arg(long, default_value = "auto")]
    pub lambda: String,
    #[arg(long, default_value_t = 1.0)]
    pub prior_var: f64,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bound trace CSV; defaults to the report path with a .trace.csv suffix.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmcArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// Target temperature, or "auto".
    #[arg(long, default_value = "auto")]
    pub lambda: String,
    #[arg(long, default_value_t = 1.0)]
    pub prior_var: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stage diagnostics CSV; defaults to the report path with a .stages.csv suffix.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompleteArgs {
    /// Observed entries as row,col,value with 1-based indices.
    #[arg(long)]
    pub entries: PathBuf,
    /// Held-out entries in the same format.
    #[arg(long, conflicts_with = "holdout")]
    pub test_entries: Option<PathBuf>,
    /// Fraction of entries held out, drawn with --seed.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Prior rate, or "auto" for the largest value the smallness rule allows.
    #[arg(long, default_value = "1")]
    pub b: String,
    /// β in the smallness rule; the number of training entries when absent.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Factor means CSV.
    #[arg(long)]
    pub factors: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    #[arg(long, value_enum)]
    pub method: MethodKind,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub options: MethodArgs,
    /// Temperature grid.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    /// Read --lambdas as multiples of the recommended temperature.
    #[arg(long)]
    pub relative: bool,
    /// Prior variance grid.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub prior_vars: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid table CSV; defaults to the report path with a .grid.csv suffix.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

fn as_display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

pub enum Failure {
    Usage(String),
    Core(pacvb_core::Error),
}

impl From<pacvb_core::Error> for Failure {
    fn from(e: pacvb_core::Error) -> Self {
        Failure::Core(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Smc(a) => commands::smc(a),
        Command::Complete(a) => commands::complete(a),
        Command::Cv(a) => commands::cv(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            Cli::command().error(clap::error::ErrorKind::ArgumentConflict, msg).exit()
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
