//! Monte-Carlo coverage experiments, stability selection and AUC-based
//! prediction evaluation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compositional::{seeded_rng, simulate_dataset, SimulationConfig};
use crate::constraint::{ConstraintSet, GroupConstraints};
use crate::debias::{infer, DebiasOptions};
use crate::error::{Error, Result};
use crate::glm::{expit, Dataset, GlmFamily};
use crate::select::{fit_path, gamma_rule, select_lambda, PathMode, DEFAULT_GRID_SIZE};
use crate::solver::{Problem, SolverOptions};

/// Constraints imposed when fitting a simulated replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// The eight true zero-sum groups.
    Multi,
    /// A single all-ones constraint.
    One,
    None,
    /// The misspecified five-group partition.
    Wrong,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 4] = [
        ConstraintMode::Multi,
        ConstraintMode::One,
        ConstraintMode::None,
        ConstraintMode::Wrong,
    ];

    pub fn constraints(self, p: usize) -> Result<ConstraintSet> {
        match self {
            ConstraintMode::Multi => GroupConstraints::simulation_true(p)?.build(p),
            ConstraintMode::One => Ok(ConstraintSet::sum_to_zero(p)),
            ConstraintMode::None => Ok(ConstraintSet::unconstrained(p)),
            ConstraintMode::Wrong => GroupConstraints::simulation_misspecified(p)?.build(p),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintMode::Multi => "multi",
            ConstraintMode::One => "one",
            ConstraintMode::None => "none",
            ConstraintMode::Wrong => "wrong",
        }
    }
}

impl std::fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multi" => Ok(ConstraintMode::Multi),
            "one" => Ok(ConstraintMode::One),
            "none" => Ok(ConstraintMode::None),
            "wrong" => Ok(ConstraintMode::Wrong),
            other => Err(Error::Validation(format!(
                "unknown constraint mode '{other}' (expected multi, one, none or wrong)"
            ))),
        }
    }
}

/// Largest fraction of failed replicates tolerated by an experiment.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Design of every replicate; its seed is the base seed.
    pub simulation: SimulationConfig,
    pub mode: ConstraintMode,
    pub replicates: usize,
    pub alpha: f64,
    pub grid_size: usize,
    pub solver: SolverOptions,
    pub max_failure_fraction: f64,
}

impl ExperimentConfig {
    pub fn new(simulation: SimulationConfig, mode: ConstraintMode, replicates: usize) -> Self {
        ExperimentConfig {
            simulation,
            mode,
            replicates,
            alpha: 0.05,
            grid_size: DEFAULT_GRID_SIZE,
            solver: SolverOptions::default(),
            max_failure_fraction: MAX_FAILURE_FRACTION,
        }
    }

    /// Seed of replicate `i`.
    pub fn replicate_seed(&self, i: usize) -> u64 {
        self.simulation.seed.wrapping_add(i as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Validation("replicates must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.max_failure_fraction) {
            return Err(Error::Validation(format!(
                "max_failure_fraction must lie in [0, 1), got {}",
                self.max_failure_fraction
            )));
        }
        self.simulation.validate()?;
        self.solver.validate()
    }
}

/// Per-replicate results. Coordinates without an interval are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub seed: u64,
    pub lambda_opt: f64,
    pub gamma: f64,
    pub beta_true: Vec<f64>,
    pub estimate: Vec<f64>,
    pub beta_u: Vec<f64>,
    pub std_error: Vec<Option<f64>>,
    pub ci_lower: Vec<Option<f64>>,
    pub ci_upper: Vec<Option<f64>>,
    /// `‖Cᵀβ̂ᵘ‖∞` under the constraints used for fitting.
    pub constraint_violation: f64,
    pub escalations: usize,
}

impl ReplicateResult {
    pub fn covered(&self, j: usize) -> Option<bool> {
        let b = self.beta_true[j];
        Some(self.ci_lower[j]? <= b && b <= self.ci_upper[j]?)
    }

    pub fn selected(&self, j: usize) -> Option<bool> {
        Some(self.ci_lower[j]? > 0.0 || self.ci_upper[j]? < 0.0)
    }

    pub fn ci_length(&self, j: usize) -> Option<f64> {
        Some(self.ci_upper[j]? - self.ci_lower[j]?)
    }

    /// `(β̂ᵘ_j − β_j)/se_j`.
    pub fn z_score(&self, j: usize) -> Option<f64> {
        let se = self.std_error[j]?;
        (se > 0.0).then(|| (self.beta_u[j] - self.beta_true[j]) / se)
    }

    /// Fraction of the coordinates in `set` (with an interval) that are selected.
    fn selection_rate(&self, set: impl Iterator<Item = usize>) -> Option<f64> {
        let (hits, total) = set
            .filter_map(|j| self.selected(j))
            .fold((0usize, 0usize), |(h, t), s| (h + s as usize, t + 1));
        (total > 0).then(|| hits as f64 / total as f64)
    }

    pub fn true_positive_rate(&self) -> Option<f64> {
        self.selection_rate((0..self.beta_true.len()).filter(|&j| self.beta_true[j] != 0.0))
    }

    pub fn false_positive_rate(&self) -> Option<f64> {
        self.selection_rate((0..self.beta_true.len()).filter(|&j| self.beta_true[j] == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub constraint_mode: ConstraintMode,
    pub n: usize,
    pub p: usize,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub seeds: Vec<u64>,
    /// Per coordinate, over replicates in which the interval exists.
    pub coverage: Vec<f64>,
    pub mean_coverage: f64,
    pub mean_ci_length: f64,
    pub tp_rate: f64,
    pub fp_rate: f64,
    /// Intervals that could not be formed, summed over replicates.
    pub missing_intervals: usize,
    pub max_constraint_violation: f64,
    pub failures: Vec<ReplicateFailure>,
    pub replicates: Vec<ReplicateResult>,
    /// Wall-clock time; not serialized so that reports are reproducible.
    #[serde(skip)]
    pub timing_seconds: f64,
}

impl ExperimentReport {
    /// Pooled z-statistics of the truly-zero coordinates.
    pub fn null_z_scores(&self) -> Vec<f64> {
        self.replicates
            .iter()
            .flat_map(|r| (0..self.p).filter(|&j| r.beta_true[j] == 0.0).filter_map(|j| r.z_score(j)))
            .collect()
    }

    /// Mean interval length per coordinate.
    pub fn ci_length_by_coordinate(&self) -> Vec<f64> {
        (0..self.p)
            .map(|j| mean(self.replicates.iter().filter_map(|r| r.ci_length(j))).unwrap_or(f64::NAN))
            .collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, k) = values.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    (k > 0).then(|| s / k as f64)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Simulate, tune by EBIC, fit, de-bias and build intervals for one seed.
pub fn run_replicate(config: &ExperimentConfig, seed: u64) -> Result<ReplicateResult> {
    let sim = simulate_dataset(&config.simulation.with_seed(seed))?;
    let p = config.simulation.p;
    let cs = config.mode.constraints(p)?;
    let family = GlmFamily::Logistic;
    let path = select_lambda(&sim.dataset, family, &cs, config.grid_size, &config.solver)?;
    let fit = path.selected();
    let gamma = gamma_rule(path.lambda_opt())?;
    let inf = infer(fit, &sim.dataset, family, &cs, &DebiasOptions::with_gamma(gamma), config.alpha)?;
    let opt = |v: f64| v.is_finite().then_some(v);
    Ok(ReplicateResult {
        seed,
        lambda_opt: path.lambda_opt(),
        gamma,
        beta_true: sim.beta_true.iter().cloned().collect(),
        estimate: fit.beta.iter().cloned().collect(),
        beta_u: inf.beta_u.iter().cloned().collect(),
        std_error: inf.std_errors.iter().map(|&v| opt(v)).collect(),
        ci_lower: inf.ci_lower.iter().map(|&v| opt(v)).collect(),
        ci_upper: inf.ci_upper.iter().map(|&v| opt(v)).collect(),
        constraint_violation: cs.violation(&inf.beta_u),
        escalations: inf.rows.iter().map(|r| r.escalations).sum(),
    })
}

/// Runs `config.replicates` independent replicates in parallel and
/// aggregates coverage, interval length and selection rates.
pub fn run_coverage_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let seeds: Vec<u64> = (0..config.replicates).map(|i| config.replicate_seed(i)).collect();
    let outcomes: Vec<(u64, Result<ReplicateResult>)> =
        seeds.par_iter().map(|&s| (s, run_replicate(config, s))).collect();

    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(r) => replicates.push(r),
            Err(e) => {
                log::warn!("replicate with seed {seed} failed: {e}");
                failures.push(ReplicateFailure {
                    seed,
                    kind: e.kind().to_owned(),
                    message: e.to_string(),
                });
            }
        }
    }
    let cap = (config.max_failure_fraction * config.replicates as f64).floor() as usize;
    if failures.len() > cap || replicates.is_empty() {
        return Err(Error::Experiment(format!(
            "{} of {} replicates failed (at most {cap} allowed); first failure: {}",
            failures.len(),
            config.replicates,
            failures.first().map(|f| f.message.as_str()).unwrap_or("none")
        )));
    }

    let p = config.simulation.p;
    let coverage: Vec<f64> = (0..p)
        .map(|j| {
            mean(replicates.iter().filter_map(|r| r.covered(j)).map(|c| c as u8 as f64)).unwrap_or(f64::NAN)
        })
        .collect();
    let mean_coverage = mean(coverage.iter().cloned().filter(|v| v.is_finite())).unwrap_or(f64::NAN);
    let mean_ci_length =
        mean(replicates.iter().flat_map(|r| (0..p).filter_map(move |j| r.ci_length(j)))).unwrap_or(f64::NAN);
    let tp_rate = mean(replicates.iter().filter_map(|r| r.true_positive_rate())).unwrap_or(f64::NAN);
    let fp_rate = mean(replicates.iter().filter_map(|r| r.false_positive_rate())).unwrap_or(f64::NAN);
    let missing_intervals = replicates
        .iter()
        .map(|r| r.ci_lower.iter().filter(|v| v.is_none()).count())
        .sum();
    let max_constraint_violation = replicates.iter().map(|r| r.constraint_violation).fold(0.0, f64::max);
    let timing_seconds = start.elapsed().as_secs_f64();
    log::info!(
        "mode={} n={} p={} replicates={} finished in {timing_seconds:.1}s",
        config.mode,
        config.simulation.n,
        p,
        config.replicates
    );
    Ok(ExperimentReport {
        config: config.clone(),
        constraint_mode: config.mode,
        n: config.simulation.n,
        p,
        n_replicates: replicates.len(),
        n_failed: failures.len(),
        seeds,
        coverage,
        mean_coverage,
        mean_ci_length,
        tp_rate,
        fp_rate,
        missing_intervals,
        max_constraint_violation,
        failures,
        replicates,
        timing_seconds,
    })
}

/// Area under the ROC curve in Mann–Whitney form, ties counted one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::Domain(format!("labels must be 0 or 1, found {l}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Domain("auc needs both classes among the labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the midrank sum of positives keeps everything integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut k = i;
        while k + 1 < order.len() && scores[order[k + 1]] == scores[order[i]] {
            k += 1;
        }
        let twice_midrank = (i + 1 + k + 1) as u128;
        rank_sum2 += twice_midrank * order[i..=k].iter().filter(|&&o| labels[o] == 1.0).count() as u128;
        i = k + 1;
    }
    let np = n_pos as u128;
    // 2·U = 2·R − n₊(n₊+1)
    let twice_u = rank_sum2 - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Draws `round(fraction·n_c)` indices from every class `c` of a 0/1
/// response, without replacement. Returns `(chosen, rest)`, both sorted.
fn stratified_split<R: Rng + ?Sized>(y: &DVector<f64>, fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut chosen = Vec::new();
    let mut rest = Vec::new();
    for class in [0.0, 1.0] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        let k = (fraction * idx.len() as f64).round() as usize;
        idx.shuffle(rng);
        chosen.extend_from_slice(&idx[..k]);
        rest.extend_from_slice(&idx[k..]);
    }
    chosen.sort_unstable();
    rest.sort_unstable();
    (chosen, rest)
}

fn is_binary(y: &DVector<f64>) -> bool {
    y.iter().all(|&v| v == 0.0 || v == 1.0)
}

fn has_both_classes(y: &DVector<f64>, rows: &[usize]) -> bool {
    let pos = rows.iter().filter(|&&i| y[i] == 1.0).count();
    pos > 0 && pos < rows.len()
}

const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub lambdas: Vec<f64>,
    /// Taxa × λ; entry `(j, k)` is the fraction of subsamples selecting `j` at `lambdas[k]`.
    #[serde(with = "matrix_rows")]
    pub selection_probability: DMatrix<f64>,
    pub n_subsamples: usize,
    pub subsample_fraction: f64,
    pub seed: u64,
    /// Subsamples redrawn because they held a single class.
    pub resamples: usize,
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().cloned().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

/// Selection frequencies over random subsamples and a λ grid.
///
/// For a 0/1 response subsamples are stratified by class; otherwise they are
/// simple random subsamples, and a subsample holding a single class is drawn
/// again.
#[allow(clippy::too_many_arguments)]
pub fn stability_selection(
    dataset: &Dataset,
    family: GlmFamily,
    cs: &ConstraintSet,
    grid: &[f64],
    n_subsamples: usize,
    fraction: f64,
    seed: u64,
    opts: &SolverOptions,
) -> Result<StabilityReport> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    if n_subsamples == 0 || grid.is_empty() {
        return Err(Error::Validation("need at least one subsample and one lambda".into()));
    }
    if let Some(l) = grid.iter().find(|&&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::Validation(format!("lambda grid has invalid value {l}")));
    }
    dataset.validate_for(family)?;
    let binary = family == GlmFamily::Logistic && is_binary(&dataset.y);
    let mut rng = seeded_rng(seed);
    let mut subsamples = Vec::with_capacity(n_subsamples);
    let mut resamples = 0;
    while subsamples.len() < n_subsamples {
        let rows = if binary {
            stratified_split(&dataset.y, fraction, &mut rng).0
        } else {
            let k = (fraction * dataset.n() as f64).round() as usize;
            let mut idx: Vec<usize> = (0..dataset.n()).collect();
            idx.shuffle(&mut rng);
            let mut rows = idx[..k].to_vec();
            rows.sort_unstable();
            rows
        };
        if rows.is_empty() || (binary && !has_both_classes(&dataset.y, &rows)) {
            resamples += 1;
            log::info!("degenerate subsample redrawn");
            if resamples > MAX_RESAMPLES {
                return Err(Error::Validation(
                    "could not draw a subsample containing both classes".into(),
                ));
            }
            continue;
        }
        subsamples.push(rows);
    }

    // fit from the largest λ down, then map back to the caller's order
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let sorted: Vec<f64> = order.iter().map(|&k| grid[k]).collect();
    let supports = subsamples
        .par_iter()
        .map(|rows| {
            let sub = dataset.select_rows(rows);
            let problem = Problem::new(&sub, family, cs)?;
            let fits = fit_path(&problem, &sorted, opts, PathMode::WarmStart)?;
            Ok(fits.into_iter().map(|f| f.beta.map(|b| (b != 0.0) as u8 as f64)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let p = dataset.p();
    let mut freq = DMatrix::zeros(p, grid.len());
    for sub in &supports {
        for (pos, &k) in order.iter().enumerate() {
            let mut col = freq.column_mut(k);
            col += &sub[pos];
        }
    }
    freq /= n_subsamples as f64;
    Ok(StabilityReport {
        lambdas: grid.to_vec(),
        selection_probability: freq,
        n_subsamples,
        subsample_fraction: fraction,
        seed,
        resamples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub mean: f64,
    pub sd: f64,
    pub values: Vec<f64>,
}

impl AucSummary {
    fn from_values(values: Vec<f64>) -> Self {
        let (mean, sd) = mean_sd(&values);
        AucSummary { mean, sd, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub train_fraction: f64,
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Penalized estimate.
    pub penalized: AucSummary,
    /// De-biased estimate.
    pub debiased: AucSummary,
    /// De-biased estimate restricted to coordinates whose interval excludes zero.
    pub debiased_selected: AucSummary,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub train_fraction: f64,
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub grid_size: usize,
    pub solver: SolverOptions,
}

impl PredictOptions {
    pub fn new(train_fraction: f64, replicates: usize, seed: u64) -> Self {
        PredictOptions {
            train_fraction,
            replicates,
            seed,
            alpha: 0.05,
            grid_size: DEFAULT_GRID_SIZE,
            solver: SolverOptions::default(),
        }
    }
}

fn scores(z: &DMatrix<f64>, beta: &DVector<f64>, intercept: f64) -> Vec<f64> {
    (z * beta).iter().map(|&eta| expit(eta + intercept)).collect()
}

/// Repeated stratified train/test splits: EBIC-tuned fit on the training
/// part, AUC of predicted probabilities on the test part.
pub fn train_test_evaluate(
    dataset: &Dataset,
    family: GlmFamily,
    cs: &ConstraintSet,
    opts: &PredictOptions,
) -> Result<PredictionReport> {
    if !is_binary(&dataset.y) {
        return Err(Error::Domain("train/test AUC evaluation needs a 0/1 response".into()));
    }
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "train_fraction must lie in (0, 1), got {}",
            opts.train_fraction
        )));
    }
    if opts.replicates == 0 {
        return Err(Error::Validation("replicates must be at least 1".into()));
    }
    dataset.validate_for(family)?;
    let mut rng = seeded_rng(opts.seed);
    let mut splits = Vec::with_capacity(opts.replicates);
    let mut resamples = 0;
    while splits.len() < opts.replicates {
        let (train, test) = stratified_split(&dataset.y, opts.train_fraction, &mut rng);
        if !has_both_classes(&dataset.y, &train) || !has_both_classes(&dataset.y, &test) {
            resamples += 1;
            log::info!("degenerate train/test split redrawn");
            if resamples > MAX_RESAMPLES {
                return Err(Error::Validation(format!(
                    "train fraction {} leaves a class empty in the training or test part",
                    opts.train_fraction
                )));
            }
            continue;
        }
        splits.push((train, test));
    }

    let results = splits
        .par_iter()
        .map(|(train, test)| {
            let tr = dataset.select_rows(train);
            let te = dataset.select_rows(test);
            let path = select_lambda(&tr, family, cs, opts.grid_size, &opts.solver)?;
            let fit = path.selected();
            let gamma = gamma_rule(path.lambda_opt())?;
            let inf = infer(fit, &tr, family, cs, &DebiasOptions::with_gamma(gamma), opts.alpha)?;
            let labels: Vec<f64> = te.y.iter().cloned().collect();
            let a_pen = auc(&scores(&te.z, &fit.beta, fit.intercept), &labels)?;
            let a_deb = auc(&scores(&te.z, &inf.beta_u, fit.intercept), &labels)?;
            let selected = inf.selected();
            let restricted = DVector::from_fn(inf.beta_u.len(), |j, _| if selected[j] { inf.beta_u[j] } else { 0.0 });
            let a_sel = auc(&scores(&te.z, &restricted, fit.intercept), &labels)?;
            Ok((a_pen, a_deb, a_sel))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PredictionReport {
        train_fraction: opts.train_fraction,
        replicates: opts.replicates,
        seed: opts.seed,
        alpha: opts.alpha,
        penalized: AucSummary::from_values(results.iter().map(|r| r.0).collect()),
        debiased: AucSummary::from_values(results.iter().map(|r| r.1).collect()),
        debiased_selected: AucSummary::from_values(results.iter().map(|r| r.2).collect()),
        resamples,
    })
}
