//! Exponential-family building blocks: log-partition, mean and variance
//! functions, and the likelihood, score and information of a GLM with
//! canonical link.
//!
//! All likelihood quantities drop the base-measure term `h(y)`, which does
//! not depend on the coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};

/// Linear predictors above this value are clamped before exponentiation in
/// the Poisson family.
pub const POISSON_ETA_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlmFamily {
    Logistic,
    Gaussian,
    Poisson,
}

impl std::str::FromStr for GlmFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" | "binomial" => Ok(GlmFamily::Logistic),
            "gaussian" | "normal" => Ok(GlmFamily::Gaussian),
            "poisson" => Ok(GlmFamily::Poisson),
            other => Err(Error::Validation(format!("unknown family '{other}'"))),
        }
    }
}

impl std::fmt::Display for GlmFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            GlmFamily::Logistic => "logistic",
            GlmFamily::Gaussian => "gaussian",
            GlmFamily::Poisson => "poisson",
        };
        f.write_str(name)
    }
}

fn check_finite(eta: f64) -> Result<()> {
    if eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("linear predictor is not finite: {eta}")))
    }
}

fn clamp_poisson(eta: f64) -> f64 {
    if eta > POISSON_ETA_CLAMP {
        log::warn!("poisson linear predictor {eta} clamped to {POISSON_ETA_CLAMP}");
        POISSON_ETA_CLAMP
    } else {
        eta
    }
}

/// Numerically stable logistic function.
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl GlmFamily {
    /// `A(η)`.
    pub fn log_partition(self, eta: f64) -> Result<f64> {
        check_finite(eta)?;
        Ok(self.log_partition_unchecked(eta))
    }

    /// `A'(η)`, the mean of the response.
    pub fn mean(self, eta: f64) -> Result<f64> {
        check_finite(eta)?;
        Ok(self.mean_unchecked(eta))
    }

    /// `A''(η)`, the variance function.
    pub fn variance(self, eta: f64) -> Result<f64> {
        check_finite(eta)?;
        Ok(self.variance_unchecked(eta))
    }

    pub(crate) fn log_partition_unchecked(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Logistic => {
                if eta > 35.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                }
            }
            GlmFamily::Gaussian => 0.5 * eta * eta,
            GlmFamily::Poisson => clamp_poisson(eta).exp(),
        }
    }

    pub(crate) fn mean_unchecked(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Logistic => expit(eta),
            GlmFamily::Gaussian => eta,
            GlmFamily::Poisson => clamp_poisson(eta).exp(),
        }
    }

    pub(crate) fn variance_unchecked(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Logistic => {
                let m = expit(eta);
                m * (1.0 - m)
            }
            GlmFamily::Gaussian => 1.0,
            GlmFamily::Poisson => clamp_poisson(eta).exp(),
        }
    }

    /// Canonical link applied to a mean response; used to start the
    /// intercept. Degenerate means are pulled inside the valid range.
    pub fn link(self, mu: f64) -> f64 {
        const EPS: f64 = 1e-10;
        match self {
            GlmFamily::Logistic => {
                let m = mu.clamp(EPS, 1.0 - EPS);
                (m / (1.0 - m)).ln()
            }
            GlmFamily::Gaussian => mu,
            GlmFamily::Poisson => mu.max(EPS).ln(),
        }
    }

    /// Checks that a response value lies in the family's support.
    pub fn validate_response(self, y: f64) -> Result<()> {
        match self {
            GlmFamily::Logistic if y != 0.0 && y != 1.0 => Err(Error::Validation(format!(
                "logistic response must be 0 or 1, found {y}"
            ))),
            GlmFamily::Poisson if y < 0.0 || y.fract() != 0.0 => Err(Error::Validation(format!(
                "poisson response must be a nonnegative integer, found {y}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Response vector and design matrix. The design is stored as given; the
/// constraint-reduced design is derived on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
    pub has_intercept: bool,
}

impl Dataset {
    pub fn new(y: DVector<f64>, z: DMatrix<f64>, has_intercept: bool) -> Result<Self> {
        if z.nrows() == 0 || z.ncols() == 0 {
            return Err(Error::Validation(format!(
                "design must be at least 1x1, got {}x{}",
                z.nrows(),
                z.ncols()
            )));
        }
        shape_check("response length vs design rows", z.nrows(), y.len())?;
        if y.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("dataset contains non-finite entries".into()));
        }
        Ok(Dataset { y, z, has_intercept })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn validate_for(&self, family: GlmFamily) -> Result<()> {
        self.y.iter().try_for_each(|&v| family.validate_response(v))
    }

    /// Sub-dataset made of the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            z: self.z.select_rows(rows),
            has_intercept: self.has_intercept,
        }
    }
}

fn check_dims(beta: &DVector<f64>, y: &DVector<f64>, z: &DMatrix<f64>) -> Result<()> {
    shape_check("coefficient length vs design columns", z.ncols(), beta.len())?;
    shape_check("response length vs design rows", z.nrows(), y.len())
}

pub(crate) fn linear_predictor(z: &DMatrix<f64>, beta: &DVector<f64>, intercept: f64) -> DVector<f64> {
    let mut eta = z * beta;
    eta.add_scalar_mut(intercept);
    eta
}

/// Average negative log-likelihood `-(1/n)[Yᵀη − Σ A(η_i)]` with
/// `η = Zβ + intercept`.
pub fn neg_loglik(
    family: GlmFamily,
    beta: &DVector<f64>,
    intercept: f64,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
) -> Result<f64> {
    check_dims(beta, y, z)?;
    let eta = linear_predictor(z, beta, intercept);
    if let Some(bad) = eta.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("linear predictor is not finite: {bad}")));
    }
    Ok(neg_loglik_from_eta(family, &eta, y))
}

pub(crate) fn neg_loglik_from_eta(family: GlmFamily, eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let total: f64 = eta
        .iter()
        .zip(y.iter())
        .map(|(&e, &yi)| family.log_partition_unchecked(e) - yi * e)
        .sum();
    total / n
}

/// Score of the full (not averaged) log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    /// `Zᵀ(Y − μ)`
    pub beta: DVector<f64>,
    /// `Σ (y_i − μ_i)`
    pub intercept: f64,
}

pub fn score(
    family: GlmFamily,
    beta: &DVector<f64>,
    intercept: f64,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
) -> Result<Score> {
    check_dims(beta, y, z)?;
    let eta = linear_predictor(z, beta, intercept);
    if let Some(bad) = eta.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("linear predictor is not finite: {bad}")));
    }
    let resid = DVector::from_iterator(
        y.len(),
        eta.iter().zip(y.iter()).map(|(&e, &yi)| yi - family.mean_unchecked(e)),
    );
    Ok(Score {
        beta: z.tr_mul(&resid),
        intercept: resid.sum(),
    })
}

/// Diagonal of `V(β, Z)`.
pub(crate) fn variance_weights(family: GlmFamily, eta: &DVector<f64>) -> DVector<f64> {
    eta.map(|e| family.variance_unchecked(e))
}

/// Un-normalised information `ZᵀV(β, Z)Z`.
pub fn information(
    family: GlmFamily,
    beta: &DVector<f64>,
    intercept: f64,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    shape_check("coefficient length vs design columns", z.ncols(), beta.len())?;
    let eta = linear_predictor(z, beta, intercept);
    let w = variance_weights(family, &eta);
    Ok(weighted_gram(z, &w))
}

/// `ZᵀWZ` for diagonal `W`, symmetrised.
pub(crate) fn weighted_gram(z: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = z.clone();
    for (mut row, &wi) in scaled.row_iter_mut().zip(w.iter()) {
        row *= wi.sqrt();
    }
    let g = scaled.tr_mul(&scaled);
    (&g + g.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const FAMILIES: [GlmFamily; 3] = [GlmFamily::Logistic, GlmFamily::Gaussian, GlmFamily::Poisson];

    #[test]
    fn log_partition_values() {
        assert_abs_diff_eq!(
            GlmFamily::Logistic.log_partition(0.0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_eq!(GlmFamily::Gaussian.log_partition(2.0).unwrap(), 2.0);
        // log(1 + e^100) = 100 + log1p(e^-100); the correction is 3.7e-44.
        let big = GlmFamily::Logistic.log_partition(100.0).unwrap();
        assert!(big.is_finite());
        assert_eq!(big, 100.0);
        assert_abs_diff_eq!(GlmFamily::Logistic.log_partition(-800.0).unwrap(), 0.0);
    }

    #[test]
    fn mean_and_variance_values() {
        assert_eq!(GlmFamily::Logistic.mean(0.0).unwrap(), 0.5);
        assert_eq!(GlmFamily::Gaussian.mean(-3.2).unwrap(), -3.2);
        let e2 = 2f64.exp();
        assert_abs_diff_eq!(GlmFamily::Logistic.mean(2.0).unwrap(), e2 / (1.0 + e2), epsilon = 1e-15);
        assert_abs_diff_eq!(GlmFamily::Logistic.mean(2.0).unwrap(), 0.880797, epsilon = 1e-6);
        assert_eq!(GlmFamily::Logistic.variance(0.0).unwrap(), 0.25);
        assert_eq!(GlmFamily::Gaussian.variance(7.0).unwrap(), 1.0);
        assert_abs_diff_eq!(GlmFamily::Logistic.variance(2.0).unwrap(), 0.104994, epsilon = 1e-6);
    }

    #[test]
    fn non_finite_input_is_domain_error() {
        for fam in FAMILIES {
            assert!(matches!(fam.log_partition(f64::NAN), Err(Error::Domain(_))));
            assert!(matches!(fam.mean(f64::INFINITY), Err(Error::Domain(_))));
            assert!(matches!(fam.variance(f64::NEG_INFINITY), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for fam in FAMILIES {
            let mut eta = -30.0;
            while eta <= 30.0 {
                let fd_mean = (fam.log_partition(eta + h).unwrap() - fam.log_partition(eta - h).unwrap()) / (2.0 * h);
                let fd_var = (fam.mean(eta + h).unwrap() - fam.mean(eta - h).unwrap()) / (2.0 * h);
                // Poisson values reach e^30; compare relative to scale there.
                let scale = fam.mean(eta).unwrap().abs().max(1.0);
                assert!((fam.mean(eta).unwrap() - fd_mean).abs() <= 1e-6 * scale, "{fam} mean at {eta}");
                assert!((fam.variance(eta).unwrap() - fd_var).abs() <= 1e-6 * scale, "{fam} var at {eta}");
                eta += 0.37;
            }
        }
    }

    #[test]
    fn neg_loglik_trivial_values() {
        let z = DMatrix::from_fn(10, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let y = DVector::from_fn(10, |i, _| (i % 2) as f64);
        let beta = DVector::zeros(3);
        let v = neg_loglik(GlmFamily::Logistic, &beta, 0.0, &y, &z).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-15);

        let y = DVector::from_vec(vec![1.0, 1.0]);
        let z = DMatrix::from_element(2, 1, 1.0);
        let v = neg_loglik(GlmFamily::Gaussian, &DVector::zeros(1), 0.0, &y, &z).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn shape_errors() {
        let z = DMatrix::zeros(4, 3);
        let y = DVector::zeros(4);
        let beta = DVector::zeros(2);
        assert!(matches!(neg_loglik(GlmFamily::Gaussian, &beta, 0.0, &y, &z), Err(Error::Shape(_))));
        assert!(matches!(score(GlmFamily::Gaussian, &beta, 0.0, &y, &z), Err(Error::Shape(_))));
        assert!(matches!(information(GlmFamily::Gaussian, &beta, 0.0, &z), Err(Error::Shape(_))));
        let y = DVector::zeros(5);
        assert!(matches!(
            neg_loglik(GlmFamily::Gaussian, &DVector::zeros(3), 0.0, &y, &z),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn score_trivial_values() {
        // Balanced labels with identical rows: residuals cancel.
        let z = DMatrix::from_fn(6, 3, |_, j| j as f64 + 0.5);
        let y = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let s = score(GlmFamily::Logistic, &DVector::zeros(3), 0.0, &y, &z).unwrap();
        assert!(s.beta.iter().all(|v| v.abs() < 1e-15));
        assert!(s.intercept.abs() < 1e-15);

        let mut z = DMatrix::zeros(1, 4);
        z[(0, 2)] = 1.0;
        let y = DVector::from_vec(vec![2.0]);
        let s = score(GlmFamily::Gaussian, &DVector::zeros(4), 0.0, &y, &z).unwrap();
        assert_eq!(s.beta, DVector::from_vec(vec![0.0, 0.0, 2.0, 0.0]));
    }

    #[test]
    fn information_trivial_values() {
        let z = DMatrix::from_fn(7, 3, |i, j| ((i + 1) as f64).sin() * (j as f64 + 1.0));
        let ztz = z.tr_mul(&z);
        let info = information(GlmFamily::Gaussian, &DVector::from_element(3, 0.3), 0.2, &z).unwrap();
        assert!((info - &ztz).abs().max() < 1e-12);
        let info = information(GlmFamily::Logistic, &DVector::zeros(3), 0.0, &z).unwrap();
        assert!((info - ztz * 0.25).abs().max() < 1e-12);
    }

    #[test]
    fn dataset_validation() {
        let z = DMatrix::from_element(2, 2, 1.0);
        assert!(Dataset::new(DVector::from_vec(vec![0.0, 1.0]), z.clone(), false).is_ok());
        assert!(matches!(
            Dataset::new(DVector::from_vec(vec![0.0, f64::NAN]), z.clone(), false),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            Dataset::new(DVector::from_vec(vec![0.0]), z.clone(), false),
            Err(Error::Shape(_))
        ));
        let d = Dataset::new(DVector::from_vec(vec![0.0, 0.5]), z, false).unwrap();
        assert!(d.validate_for(GlmFamily::Logistic).is_err());
        assert!(d.validate_for(GlmFamily::Gaussian).is_ok());
        assert!(d.validate_for(GlmFamily::Poisson).is_err());
    }
}
