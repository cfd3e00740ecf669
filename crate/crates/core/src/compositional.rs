//! Relative-abundance tables and the synthetic compositional generator.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraint::{ConstraintSet, GroupConstraints};
use crate::error::{Error, Result};
use crate::glm::{expit, Dataset};

/// Identifier of the random number generator behind every seeded draw.
pub const GENERATOR_ID: &str = "ChaCha20Rng/rand_chacha-0.9/seed_from_u64";

/// Seeded generator used throughout the crate.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Nonnegative abundances, one row per sample and one column per taxon.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceTable {
    pub w: DMatrix<f64>,
    pub taxon_names: Vec<String>,
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroReplacement {
    /// Half the smallest positive entry of the whole table.
    #[default]
    GlobalMinimum,
    /// Half the smallest positive entry of each taxon.
    PerTaxonMinimum,
}

impl std::str::FromStr for ZeroReplacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global-minimum" | "global" => Ok(ZeroReplacement::GlobalMinimum),
            "per-taxon-minimum" | "per-taxon" => Ok(ZeroReplacement::PerTaxonMinimum),
            other => Err(Error::Validation(format!(
                "unknown zero replacement '{other}' (expected global-minimum or per-taxon-minimum)"
            ))),
        }
    }
}

impl AbundanceTable {
    pub fn new(w: DMatrix<f64>, taxon_names: Vec<String>, sample_ids: Vec<String>) -> Result<Self> {
        if taxon_names.len() != w.ncols() || sample_ids.len() != w.nrows() {
            return Err(Error::Shape(format!(
                "table is {}x{} but has {} sample ids and {} taxon names",
                w.nrows(),
                w.ncols(),
                sample_ids.len(),
                taxon_names.len()
            )));
        }
        let table = AbundanceTable {
            w,
            taxon_names,
            sample_ids,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        if self.w.nrows() == 0 || self.w.ncols() == 0 {
            return Err(Error::Validation("abundance table is empty".into()));
        }
        for (i, row) in self.w.row_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Validation(format!(
                    "sample '{}' has invalid abundance {v}",
                    self.sample_ids[i]
                )));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::Validation(format!(
                    "sample '{}' has no positive abundance",
                    self.sample_ids[i]
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    /// Parses a CSV whose header row names the taxa (first cell labels the
    /// sample-id column) and whose first column holds sample ids.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Validation("abundance CSV needs a sample-id column and at least one taxon".into()));
        }
        let taxon_names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let p = taxon_names.len();
        let mut sample_ids = Vec::new();
        let mut values = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            // header is line 1
            let line = r + 2;
            if record.len() != p + 1 {
                return Err(Error::Parse {
                    row: line,
                    column: record.len().min(p + 1),
                    message: format!("expected {} fields, found {}", p + 1, record.len()),
                });
            }
            sample_ids.push(record[0].to_owned());
            for (j, cell) in record.iter().enumerate().skip(1) {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row: line,
                    column: j + 1,
                    message: format!("'{cell}' is not a number"),
                })?;
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "row {line}, column {}: abundance must be finite and nonnegative, found {v}",
                        j + 1
                    )));
                }
                values.push(v);
            }
        }
        let n = sample_ids.len();
        let w = DMatrix::from_row_slice(n, p, &values);
        AbundanceTable::new(w, taxon_names, sample_ids)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Fraction of samples in which each taxon is positive.
    pub fn prevalence(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.w
            .column_iter()
            .map(|c| c.iter().filter(|&&v| v > 0.0).count() as f64 / n)
            .collect()
    }

    /// Keeps taxa present in at least `min_fraction` of samples.
    pub fn filter_prevalence(&self, min_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&min_fraction) {
            return Err(Error::Domain(format!("min_fraction must lie in [0, 1], got {min_fraction}")));
        }
        let keep: Vec<usize> = self
            .prevalence()
            .iter()
            .enumerate()
            .filter(|(_, &f)| f >= min_fraction)
            .map(|(j, _)| j)
            .collect();
        if keep.is_empty() {
            return Err(Error::Validation(format!(
                "no taxon is present in at least {min_fraction} of samples"
            )));
        }
        let w = self.w.select_columns(&keep);
        let names = keep.iter().map(|&j| self.taxon_names[j].clone()).collect();
        AbundanceTable::new(w, names, self.sample_ids.clone())
    }

    /// Replaces zeros by half the minimum positive abundance.
    pub fn replace_zeros(&self, mode: ZeroReplacement) -> Self {
        let mut w = self.w.clone();
        match mode {
            ZeroReplacement::GlobalMinimum => {
                let min = min_positive(self.w.iter());
                if let Some(min) = min {
                    w.apply(|v| {
                        if *v == 0.0 {
                            *v = 0.5 * min;
                        }
                    });
                }
            }
            ZeroReplacement::PerTaxonMinimum => {
                let fallback = min_positive(self.w.iter());
                for mut col in w.column_iter_mut() {
                    let Some(min) = min_positive(col.iter()).or(fallback) else {
                        continue;
                    };
                    col.apply(|v| {
                        if *v == 0.0 {
                            *v = 0.5 * min;
                        }
                    });
                }
            }
        }
        AbundanceTable {
            w,
            taxon_names: self.taxon_names.clone(),
            sample_ids: self.sample_ids.clone(),
        }
    }

    pub fn to_log_composition(&self) -> Result<DMatrix<f64>> {
        to_log_composition(&self.w)
    }
}

/// Reads a two-column CSV (sample id, response) with a header row.
pub fn read_response_csv<R: std::io::Read>(reader: R) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r + 2;
        if record.len() != 2 {
            return Err(Error::Parse {
                row: line,
                column: record.len().min(2),
                message: format!("expected 2 fields (sample id, response), found {}", record.len()),
            });
        }
        let v: f64 = record[1].trim().parse().map_err(|_| Error::Parse {
            row: line,
            column: 2,
            message: format!("'{}' is not a number", &record[1]),
        })?;
        out.push((record[0].to_owned(), v));
    }
    if out.is_empty() {
        return Err(Error::Validation("response CSV has no rows".into()));
    }
    Ok(out)
}

/// Orders responses to match `sample_ids`; every sample needs exactly one response.
pub fn align_response(sample_ids: &[String], responses: &[(String, f64)]) -> Result<DVector<f64>> {
    let mut by_id = std::collections::HashMap::with_capacity(responses.len());
    for (id, v) in responses {
        if by_id.insert(id.as_str(), *v).is_some() {
            return Err(Error::Validation(format!("sample '{id}' has more than one response")));
        }
    }
    let y = sample_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Validation(format!("sample '{id}' has no response")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(y))
}

/// Prevalence filter, zero replacement and log-composition in one pass.
pub fn prepare_design(table: &AbundanceTable, min_prevalence: f64, zeros: ZeroReplacement) -> Result<(DMatrix<f64>, Vec<String>)> {
    let filtered = table.filter_prevalence(min_prevalence)?;
    let replaced = filtered.replace_zeros(zeros);
    let z = replaced.to_log_composition()?;
    Ok((z, replaced.taxon_names))
}

fn min_positive<'a>(values: impl Iterator<Item = &'a f64>) -> Option<f64> {
    values.filter(|&&v| v > 0.0).cloned().reduce(f64::min)
}

/// `Z_ij = log(W_ij / Σ_k W_ik)`.
pub fn to_log_composition(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(bad) = w.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "log-composition needs strictly positive abundances (found {bad}); replace zeros first"
        )));
    }
    let mut z = w.map(f64::ln);
    for mut row in z.row_iter_mut() {
        let lse = log_sum_exp(row.iter().cloned());
        row.add_scalar_mut(-lse);
    }
    Ok(z)
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Location vector of the log-normal abundances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocationRule {
    /// `μ_j = p/2` for the first five taxa and 1 otherwise.
    Default,
    Custom(Vec<f64>),
}

impl LocationRule {
    pub fn resolve(&self, p: usize) -> Result<DVector<f64>> {
        match self {
            LocationRule::Default => Ok(DVector::from_fn(p, |j, _| if j < 5 { p as f64 / 2.0 } else { 1.0 })),
            LocationRule::Custom(v) if v.len() == p => Ok(DVector::from_column_slice(v)),
            LocationRule::Custom(v) => Err(Error::Shape(format!("location has length {}, expected {p}", v.len()))),
        }
    }
}

/// The nonzero leading coefficients of the simulation design.
pub const DEFAULT_BETA_HEAD: [f64; 16] = [
    0.45, -0.4, 0.45, 0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, -0.6, 0.0, 0.3, 0.0, 0.0, 0.3,
];

pub fn default_beta_true(p: usize) -> DVector<f64> {
    DVector::from_fn(p, |j, _| DEFAULT_BETA_HEAD.get(j).copied().unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub p: usize,
    pub zeta: f64,
    pub location: LocationRule,
    pub beta_true: Vec<f64>,
    pub intercept_true: f64,
    pub case_fraction: f64,
    pub seed: u64,
}

impl SimulationConfig {
    /// The default design at the given size and seed.
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        SimulationConfig {
            n,
            p,
            zeta: 0.2,
            location: LocationRule::Default,
            beta_true: default_beta_true(p).iter().cloned().collect(),
            intercept_true: -1.0,
            case_fraction: 0.4,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimulationConfig { seed, ..self.clone() }
    }

    pub fn n_cases(&self) -> usize {
        (self.case_fraction * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n % 5 != 0 {
            return Err(Error::Validation(format!("n must be a positive multiple of 5, got {}", self.n)));
        }
        if self.p < 41 {
            return Err(Error::Validation(format!("p must be at least 41, got {}", self.p)));
        }
        if self.beta_true.len() != self.p {
            return Err(Error::Validation(format!(
                "beta_true has length {}, expected {}",
                self.beta_true.len(),
                self.p
            )));
        }
        if !(self.zeta > -1.0 && self.zeta < 1.0) {
            return Err(Error::Validation(format!("zeta must lie in (-1, 1), got {}", self.zeta)));
        }
        if !(self.case_fraction > 0.0 && self.case_fraction < 1.0) {
            return Err(Error::Validation(format!("case_fraction must lie in (0, 1), got {}", self.case_fraction)));
        }
        let exact = self.case_fraction * self.n as f64;
        if (exact - exact.round()).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "case_fraction {} does not split n = {} exactly",
                self.case_fraction, self.n
            )));
        }
        self.location.resolve(self.p)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    /// True abundances `W`.
    pub abundances: DMatrix<f64>,
    pub beta_true: DVector<f64>,
    pub constraints: ConstraintSet,
    /// Number of subjects drawn to fill both quotas.
    pub draws: usize,
}

/// Covariance `Σ_ij = ζ^{|i−j|}`.
pub fn ar1_covariance(p: usize, zeta: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| zeta.powi(i.abs_diff(j) as i32))
}

/// Draws log-abundance rows `x ~ N(μ, Σ)` through the Cholesky factor of Σ.
pub struct LogNormalSampler {
    location: DVector<f64>,
    factor: DMatrix<f64>,
}

impl LogNormalSampler {
    pub fn new(location: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let factor = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Simulation("covariance is not positive definite".into()))?
            .l();
        Ok(LogNormalSampler { location, factor })
    }

    pub fn sample_log<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let p = self.location.len();
        let std = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.location + &self.factor * std
    }
}

/// Maximum number of subjects drawn per requested sample.
const MAX_DRAWS_PER_SAMPLE: usize = 10_000;

/// Simulates one replicate of the compositional logistic design.
///
/// Subjects are drawn one at a time and kept only while the quota of their
/// outcome class is open, which yields exactly `case_fraction·n` cases.
pub fn simulate_dataset(config: &SimulationConfig) -> Result<SimulatedData> {
    config.validate()?;
    let (n, p) = (config.n, config.p);
    let sampler = LogNormalSampler::new(config.location.resolve(p)?, &ar1_covariance(p, config.zeta))?;
    let beta = DVector::from_column_slice(&config.beta_true);
    let mut rng = seeded_rng(config.seed);

    let case_quota = config.n_cases();
    let control_quota = n - case_quota;
    let (mut cases, mut controls) = (0usize, 0usize);
    let mut log_w = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut draws = 0usize;
    while cases < case_quota || controls < control_quota {
        draws += 1;
        if draws > MAX_DRAWS_PER_SAMPLE * n {
            return Err(Error::Simulation(format!(
                "could not fill {case_quota} cases and {control_quota} controls within {} draws; \
                 try a different n or case fraction",
                MAX_DRAWS_PER_SAMPLE * n
            )));
        }
        let x = sampler.sample_log(&mut rng);
        let lse = log_sum_exp(x.iter().cloned());
        let eta = x.iter().zip(beta.iter()).map(|(&xj, &bj)| (xj - lse) * bj).sum::<f64>() + config.intercept_true;
        let outcome = rng.random::<f64>() < expit(eta);
        let keep = if outcome { cases < case_quota } else { controls < control_quota };
        if !keep {
            continue;
        }
        if outcome {
            cases += 1;
        } else {
            controls += 1;
        }
        log_w.push(x);
        y.push(if outcome { 1.0 } else { 0.0 });
    }

    let log_w = DMatrix::from_fn(n, p, |i, j| log_w[i][j]);
    let abundances = log_w.map(f64::exp);
    let mut z = log_w;
    for mut row in z.row_iter_mut() {
        let lse = log_sum_exp(row.iter().cloned());
        row.add_scalar_mut(-lse);
    }
    let dataset = Dataset::new(DVector::from_vec(y), z, true)?;
    let constraints = GroupConstraints::simulation_true(p)?.build(p)?;
    Ok(SimulatedData {
        dataset,
        abundances,
        beta_true: beta,
        constraints,
        draws,
    })
}
