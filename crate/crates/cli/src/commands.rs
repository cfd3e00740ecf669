use std::fs;
use std::path::Path;

use serde::Serialize;

use complasso::compositional::{
    align_response, prepare_design, read_response_csv, simulate_dataset, AbundanceTable, SimulationConfig,
};
use complasso::debias::{infer as debias_infer, DebiasOptions};
use complasso::harness::{
    run_coverage_experiment, stability_selection, train_test_evaluate, ExperimentConfig, PredictOptions,
};
use complasso::report::{self, FitSummary, InferenceSummary};
use complasso::select::{ebic, gamma_rule, lambda_grid, lambda_max, select_lambda, xi_rule, PathResult};
use complasso::solver::{fit as fit_model, SolverOptions};
use complasso::{ConstraintSet, Dataset, Error, GroupConstraints, Result};

use crate::{DataArgs, EvaluateArgs, FitArgs, GammaChoice, InferArgs, LambdaChoice, PredictArgs, SimulateArgs, StabilityArgs};

/// Share of coordinates allowed to lack an interval before `infer` fails.
const MAX_MISSING_FRACTION: f64 = 0.10;

struct Loaded {
    dataset: Dataset,
    names: Vec<String>,
    constraints: ConstraintSet,
}

fn load(args: &DataArgs) -> Result<Loaded> {
    let table = AbundanceTable::from_csv_path(&args.abundances)?;
    let responses = read_response_csv(fs::File::open(&args.response)?)?;
    let y = align_response(&table.sample_ids, &responses)?;
    let (z, names) = prepare_design(&table, args.min_prevalence, args.zero_replacement)?;
    let dataset = Dataset::new(y, z, !args.no_intercept)?;
    dataset.validate_for(args.family)?;
    let p = dataset.p();
    let constraints = match args.constraints.as_str() {
        "sum-to-zero" => ConstraintSet::sum_to_zero(p),
        "none" => ConstraintSet::unconstrained(p),
        path => GroupConstraints::from_json_file(path)?.build(p)?,
    };
    Ok(Loaded {
        dataset,
        names,
        constraints,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct FitOutput {
    selection: &'static str,
    xi: f64,
    ebic: f64,
    fit: FitSummary,
}

/// Fits at the requested λ and returns the path (one row for a fixed λ).
fn fit_path(args: &FitArgs, data: &Loaded) -> Result<PathResult> {
    let family = args.data.family;
    let opts = SolverOptions::default();
    match args.lambda {
        LambdaChoice::Ebic => select_lambda(&data.dataset, family, &data.constraints, args.grid_size, &opts),
        LambdaChoice::Value(lambda) => {
            let fit = fit_model(&data.dataset, family, &data.constraints, lambda, &opts)?;
            let xi = xi_rule(data.dataset.n(), data.dataset.p());
            let value = ebic(&fit, &data.dataset, family, xi)?;
            Ok(PathResult {
                lambdas: vec![lambda],
                fits: vec![fit],
                ebic_values: vec![value],
                selected_index: 0,
                xi,
            })
        }
    }
}

fn write_fit(args: &FitArgs, data: &Loaded, path: &PathResult) -> Result<()> {
    ensure_dir(&args.out)?;
    let fit = path.selected();
    let output = FitOutput {
        selection: match args.lambda {
            LambdaChoice::Ebic => "ebic",
            LambdaChoice::Value(_) => "fixed",
        },
        xi: path.xi,
        ebic: path.ebic_values[path.selected_index],
        fit: FitSummary::new(fit, &data.names, &data.constraints),
    };
    report::write_document(args.out.join("fit.json"), args, &output)?;
    report::write_path_csv(args.out.join("path.csv"), path)?;
    if !fit.converged {
        return Err(Error::Solver(format!(
            "fit at lambda={} did not converge (KKT residual {:.3e})",
            fit.lambda, fit.kkt_residual
        )));
    }
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let data = load(&args.data)?;
    let path = fit_path(args, &data)?;
    write_fit(args, &data, &path)
}

pub fn infer(args: &InferArgs) -> Result<()> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::Validation(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let data = load(&args.fit.data)?;
    let path = fit_path(&args.fit, &data)?;
    write_fit(&args.fit, &data, &path)?;
    let fit = path.selected();
    let gamma = match args.gamma {
        GammaChoice::Auto => gamma_rule(fit.lambda)?,
        GammaChoice::Value(g) => g,
    };
    let inf = debias_infer(
        fit,
        &data.dataset,
        args.fit.data.family,
        &data.constraints,
        &DebiasOptions::with_gamma(gamma),
        args.alpha,
    )?;
    let summary = InferenceSummary::new(&inf, gamma, &data.constraints);
    report::write_document(args.fit.out.join("inference.json"), args, &summary)?;
    report::write_intervals_csv(args.fit.out.join("intervals.csv"), &inf, &data.names)?;
    let p = inf.beta_u.len();
    if summary.missing > 0 {
        log::warn!("{} of {p} coordinates have no confidence interval", summary.missing);
    }
    if summary.missing as f64 > MAX_MISSING_FRACTION * p as f64 {
        return Err(Error::Inference(format!(
            "{} of {p} coordinates have no confidence interval",
            summary.missing
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulationOutput {
    n: usize,
    p: usize,
    cases: usize,
    draws: usize,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut config = SimulationConfig::new(args.n, args.p, args.seed);
    config.zeta = args.zeta;
    let sim = simulate_dataset(&config)?;
    ensure_dir(&args.out)?;
    report::write_simulation(&args.out, &sim)?;
    let output = SimulationOutput {
        n: sim.dataset.n(),
        p: sim.dataset.p(),
        cases: sim.dataset.y.iter().filter(|&&v| v == 1.0).count(),
        draws: sim.draws,
    };
    report::write_document(args.out.join("simulation.json"), &config, &output)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut reports = Vec::new();
    for &mode in &args.mode {
        for &n in &args.n {
            let mut config = ExperimentConfig::new(SimulationConfig::new(n, args.p, args.seed), mode, args.reps);
            config.alpha = args.alpha;
            let report = run_coverage_experiment(&config)?;
            log::info!(
                "mode={mode} n={n}: tp={:.3} fp={:.3} coverage={:.3} ({:.1}s)",
                report.tp_rate,
                report.fp_rate,
                report.mean_coverage,
                report.timing_seconds
            );
            reports.push(report);
        }
    }
    ensure_dir(&args.out)?;
    report::write_document(args.out.join("evaluation.json"), args, &reports)?;
    report::write_experiment_csv(args.out.join("coverage.csv"), &reports)?;
    report::write_summary_csv(args.out.join("summary.csv"), &reports)?;
    if args.figure_data {
        report::write_figure_data_csv(args.out.join("figure_data.csv"), &reports)?;
    }
    Ok(())
}

pub fn stability(args: &StabilityArgs) -> Result<()> {
    let data = load(&args.data)?;
    let family = args.data.family;
    let lmax = lambda_max(&data.dataset, family, &data.constraints)?;
    let grid = lambda_grid(lmax, args.grid_size)?;
    let result = stability_selection(
        &data.dataset,
        family,
        &data.constraints,
        &grid,
        args.subsamples,
        args.fraction,
        args.seed,
        &SolverOptions::default(),
    )?;
    ensure_dir(&args.out)?;
    report::write_document(args.out.join("stability.json"), args, &result)?;
    report::write_stability_csv(args.out.join("stability.csv"), &result, &data.names)
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let data = load(&args.data)?;
    let mut opts = PredictOptions::new(args.train_fraction, args.reps, args.seed);
    opts.alpha = args.alpha;
    let result = train_test_evaluate(&data.dataset, args.data.family, &data.constraints, &opts)?;
    ensure_dir(&args.out)?;
    report::write_document(args.out.join("prediction.json"), args, &result)?;
    report::write_prediction_csv(args.out.join("prediction.csv"), &result)
}
