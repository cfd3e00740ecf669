use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use complasso::compositional::ZeroReplacement;
use complasso::{Error, GlmFamily};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "complasso", version, about = "Constrained penalized GLMs and de-biased inference for compositional data")]
struct Cli {
    /// Worker threads (0 picks one per core).
    #[arg(long, global = true, env = "COMPLASSO_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select λ and fit the constrained penalized model.
    Fit(FitArgs),
    /// Fit, de-bias and write confidence intervals.
    Infer(InferArgs),
    /// Draw a synthetic compositional case-control dataset.
    Simulate(SimulateArgs),
    /// Monte-Carlo coverage and selection experiments.
    Evaluate(EvaluateArgs),
    /// Selection frequencies over random subsamples and a λ grid.
    Stability(StabilityArgs),
    /// Repeated train/test AUC evaluation.
    Predict(PredictArgs),
}

/// λ given as a number or chosen by EBIC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Ebic,
    Value(f64),
}

impl std::str::FromStr for LambdaChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("ebic") {
            return Ok(LambdaChoice::Ebic);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(LambdaChoice::Value(v)),
            _ => Err(format!("expected 'ebic' or a nonnegative number, got '{s}'")),
        }
    }
}

impl Serialize for LambdaChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LambdaChoice::Ebic => s.serialize_str("ebic"),
            LambdaChoice::Value(v) => s.serialize_f64(*v),
        }
    }
}

/// γ given as a number or `0.01·λ_opt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaChoice {
    Auto,
    Value(f64),
}

impl std::str::FromStr for GammaChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(GammaChoice::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(GammaChoice::Value(v)),
            _ => Err(format!("expected 'auto' or a positive number, got '{s}'")),
        }
    }
}

impl Serialize for GammaChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GammaChoice::Auto => s.serialize_str("auto"),
            GammaChoice::Value(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Abundance CSV: header of taxon names, first column sample ids.
    #[arg(long)]
    pub abundances: PathBuf,
    /// Response CSV: sample id and outcome.
    #[arg(long)]
    pub response: PathBuf,
    #[arg(long, default_value = "logistic")]
    pub family: GlmFamily,
    /// "sum-to-zero", "none" or a JSON file of 1-based index groups.
    #[arg(long, default_value = "sum-to-zero")]
    pub constraints: String,
    /// Drop taxa present in fewer than this fraction of samples.
    #[arg(long, default_value_t = 0.0)]
    pub min_prevalence: f64,
    #[arg(long, default_value = "global-minimum")]
    pub zero_replacement: ZeroReplacement,
    /// Fit without an intercept.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// A number or "ebic".
    #[arg(long, default_value = "ebic")]
    pub lambda: LambdaChoice,
    #[arg(long, default_value_t = complasso::select::DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// A number or "auto" (0.01 times the selected λ).
    #[arg(long, default_value = "auto")]
    pub gamma: GammaChoice,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 0.2)]
    pub zeta: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Comma-separated constraint modes: multi, one, none, wrong.
    #[arg(long, value_delimiter = ',', default_value = "multi")]
    pub mode: Vec<complasso::harness::ConstraintMode>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "500")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Also write the long-format coverage/length table.
    #[arg(long)]
    pub figure_data: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 50)]
    pub subsamples: usize,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub fraction: f64,
    #[arg(long, default_value_t = 20)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fraction of each class used for training.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Exit code 1 for bad input, 2 for numerical failure.
fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn report_error(e: &Error) -> ExitCode {
    let payload = serde_json::json!({
        "error": { "kind": e.kind(), "message": e.to_string() }
    });
    eprintln!("{payload}");
    ExitCode::from(exit_code(e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Infer(a) => commands::infer(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Stability(a) => commands::stability(a),
        Command::Predict(a) => commands::predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}
