//! Serializable result documents and the JSON/CSV writers behind every output file.
//!
//! Writers never embed timestamps or wall-clock times, so re-running with the
//! same configuration reproduces every file byte for byte.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::compositional::{SimulatedData, GENERATOR_ID};
use crate::constraint::ConstraintSet;
use crate::debias::InferenceResult;
use crate::error::Result;
use crate::harness::{ExperimentReport, PredictionReport, StabilityReport};
use crate::select::PathResult;
use crate::solver::FitResult;

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level wrapper of every JSON output.
#[derive(Debug, Serialize)]
pub struct Document<'a, C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub generator: &'a str,
    pub config: &'a C,
    pub result: &'a R,
}

impl<'a, C: Serialize, R: Serialize> Document<'a, C, R> {
    pub fn new(config: &'a C, result: &'a R) -> Self {
        Document {
            schema_version: SCHEMA_VERSION,
            generator: GENERATOR_ID,
            config,
            result,
        }
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_document<C: Serialize, R: Serialize>(path: impl AsRef<Path>, config: &C, result: &R) -> Result<()> {
    write_json(path, &Document::new(config, result))
}

/// Shortest round-trip form; NaN becomes an empty field.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn csv_writer(path: impl AsRef<Path>) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub index: usize,
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub lambda: f64,
    pub intercept: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    pub support_size: usize,
    pub constraint_violation: f64,
    pub coefficients: Vec<Coefficient>,
}

impl FitSummary {
    pub fn new(fit: &FitResult, names: &[String], cs: &ConstraintSet) -> Self {
        FitSummary {
            lambda: fit.lambda,
            intercept: fit.intercept,
            converged: fit.converged,
            iterations: fit.iters,
            kkt_residual: fit.kkt_residual,
            objective: fit.objective(),
            support_size: fit.support_size(),
            constraint_violation: cs.violation(&fit.beta),
            coefficients: fit
                .beta
                .iter()
                .enumerate()
                .map(|(j, &value)| Coefficient {
                    index: j + 1,
                    name: names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1)),
                    value,
                })
                .collect(),
        }
    }
}

/// One row per grid point.
pub fn write_path_csv(path: impl AsRef<Path>, result: &PathResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["lambda", "ebic", "support_size", "converged", "iterations", "kkt_residual", "selected"])?;
    for (k, fit) in result.fits.iter().enumerate() {
        w.write_record([
            fmt_f64(result.lambdas[k]),
            fmt_f64(result.ebic_values[k]),
            fit.support_size().to_string(),
            fit.converged.to_string(),
            fit.iters.to_string(),
            fmt_f64(fit.kkt_residual),
            (k == result.selected_index).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowDiagnostics {
    pub index: usize,
    pub gamma: f64,
    pub escalations: usize,
    pub iterations: usize,
    pub solved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceSummary {
    pub alpha: f64,
    pub z_multiplier: f64,
    pub gamma: f64,
    pub n: usize,
    pub missing: usize,
    pub selected: usize,
    pub constraint_violation: f64,
    pub rows: Vec<RowDiagnostics>,
}

impl InferenceSummary {
    pub fn new(inf: &InferenceResult, gamma: f64, cs: &ConstraintSet) -> Self {
        InferenceSummary {
            alpha: inf.alpha,
            z_multiplier: inf.z_multiplier,
            gamma,
            n: inf.n,
            missing: inf.missing().iter().filter(|&&m| m).count(),
            selected: inf.selected().iter().filter(|&&s| s).count(),
            constraint_violation: cs.violation(&inf.beta_u),
            rows: inf
                .rows
                .iter()
                .enumerate()
                .map(|(j, r)| RowDiagnostics {
                    index: j + 1,
                    gamma: r.gamma,
                    escalations: r.escalations,
                    iterations: r.iters,
                    solved: r.solved,
                })
                .collect(),
        }
    }
}

pub fn write_intervals_csv(path: impl AsRef<Path>, inf: &InferenceResult, names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["coordinate", "name", "estimate", "se", "lower", "upper", "selected"])?;
    let selected = inf.selected();
    for j in 0..inf.beta_u.len() {
        w.write_record([
            (j + 1).to_string(),
            names.get(j).cloned().unwrap_or_default(),
            fmt_f64(inf.beta_u[j]),
            fmt_f64(inf.std_errors[j]),
            fmt_f64(inf.ci_lower[j]),
            fmt_f64(inf.ci_upper[j]),
            selected[j].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Tidy table, one row per coordinate per experiment.
pub fn write_experiment_csv(path: impl AsRef<Path>, reports: &[ExperimentReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["mode", "n", "p", "coordinate", "beta_true", "coverage", "mean_ci_length", "selection_rate"])?;
    for r in reports {
        let lengths = r.ci_length_by_coordinate();
        let beta_true = &r.config.simulation.beta_true;
        for j in 0..r.p {
            let sel: Vec<f64> = r
                .replicates
                .iter()
                .filter_map(|rep| rep.selected(j))
                .map(|s| s as u8 as f64)
                .collect();
            let rate = if sel.is_empty() { f64::NAN } else { sel.iter().sum::<f64>() / sel.len() as f64 };
            w.write_record([
                r.constraint_mode.to_string(),
                r.n.to_string(),
                r.p.to_string(),
                (j + 1).to_string(),
                fmt_f64(beta_true[j]),
                fmt_f64(r.coverage[j]),
                fmt_f64(lengths[j]),
                fmt_f64(rate),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per experiment with the aggregate rates.
pub fn write_summary_csv(path: impl AsRef<Path>, reports: &[ExperimentReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "mode",
        "n",
        "p",
        "replicates",
        "failed",
        "tp_rate",
        "fp_rate",
        "mean_coverage",
        "mean_ci_length",
        "missing_intervals",
    ])?;
    for r in reports {
        w.write_record([
            r.constraint_mode.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.n_replicates.to_string(),
            r.n_failed.to_string(),
            fmt_f64(r.tp_rate),
            fmt_f64(r.fp_rate),
            fmt_f64(r.mean_coverage),
            fmt_f64(r.mean_ci_length),
            r.missing_intervals.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: mode, n, coordinate, metric (coverage or ci_length), value.
pub fn write_figure_data_csv(path: impl AsRef<Path>, reports: &[ExperimentReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["mode", "n", "coordinate", "metric", "value"])?;
    for r in reports {
        let lengths = r.ci_length_by_coordinate();
        for (metric, values) in [("coverage", &r.coverage), ("ci_length", &lengths)] {
            for (j, v) in values.iter().enumerate() {
                w.write_record([
                    r.constraint_mode.to_string(),
                    r.n.to_string(),
                    (j + 1).to_string(),
                    metric.to_string(),
                    fmt_f64(*v),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Taxa × λ matrix of selection frequencies.
pub fn write_stability_csv(path: impl AsRef<Path>, report: &StabilityReport, names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["taxon".to_string()];
    header.extend(report.lambdas.iter().map(|&l| format!("lambda={}", fmt_f64(l))));
    w.write_record(&header)?;
    for (j, row) in report.selection_probability.row_iter().enumerate() {
        let mut rec = vec![names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1))];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_prediction_csv(path: impl AsRef<Path>, report: &PredictionReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["replicate", "penalized", "debiased", "debiased_selected"])?;
    for k in 0..report.penalized.values.len() {
        w.write_record([
            (k + 1).to_string(),
            fmt_f64(report.penalized.values[k]),
            fmt_f64(report.debiased.values[k]),
            fmt_f64(report.debiased_selected.values[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `abundances.csv`, `response.csv`, `design.csv` and
/// `beta_true.csv` into `dir`. The first two are valid CLI inputs.
pub fn write_simulation(dir: impl AsRef<Path>, sim: &SimulatedData) -> Result<()> {
    let dir = dir.as_ref();
    let n = sim.dataset.n();
    let p = sim.dataset.p();
    let ids: Vec<String> = (1..=n).map(|i| format!("s{i}")).collect();
    let taxa: Vec<String> = (1..=p).map(|j| format!("taxon{j}")).collect();

    let mut w = csv_writer(dir.join("abundances.csv"))?;
    let mut header = vec!["sample".to_string()];
    header.extend(taxa.iter().cloned());
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![ids[i].clone()];
        rec.extend(sim.abundances.row(i).iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv_writer(dir.join("response.csv"))?;
    w.write_record(["sample", "y"])?;
    for i in 0..n {
        w.write_record([ids[i].clone(), fmt_f64(sim.dataset.y[i])])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir.join("design.csv"))?;
    let mut header = vec!["sample".to_string(), "y".to_string()];
    header.extend((1..=p).map(|j| format!("z{j}")));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![ids[i].clone(), fmt_f64(sim.dataset.y[i])];
        rec.extend(sim.dataset.z.row(i).iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv_writer(dir.join("beta_true.csv"))?;
    w.write_record(["coordinate", "name", "beta_true"])?;
    for j in 0..p {
        w.write_record([(j + 1).to_string(), taxa[j].clone(), fmt_f64(sim.beta_true[j])])?;
    }
    w.flush()?;
    Ok(())
}
