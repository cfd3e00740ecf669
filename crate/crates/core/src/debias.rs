//! De-biased estimator and Wald confidence intervals.
//!
//! For each coordinate `i` the row `m_i` solves
//!
//! ```text
//! minimize mᵀΣ̂m  subject to  ‖Σ̂m − (I − P_C)e_i‖∞ ≤ γ
//! ```
//!
//! by ADMM on the split `w = Σ̂m`, `w ∈ [t − γ, t + γ]`. The `m`-update
//! solves `(2Σ̂ + ρΣ̂²)m = ρΣ̂(w − u)`, which is diagonal in the eigenbasis of
//! `Σ̂`; one eigendecomposition is shared by all rows and every `ρ`. The
//! ADMM iterate is then polished by an active-set solve of the equality
//! constrained problem, which is exact when the active set is right.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::constraint::ConstraintSet;
use crate::error::{shape_check, Error, Result};
use crate::glm::{linear_predictor, variance_weights, weighted_gram, Dataset, GlmFamily};
use crate::solver::FitResult;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DebiasOptions {
    pub gamma: f64,
    pub admm_rho: f64,
    pub qp_tol: f64,
    pub qp_max_iters: usize,
    /// Factor applied to `γ` after an infeasible or unconverged solve.
    pub gamma_growth: f64,
    pub max_escalations: usize,
}

impl DebiasOptions {
    pub fn with_gamma(gamma: f64) -> Self {
        DebiasOptions {
            gamma,
            admm_rho: 1.0,
            qp_tol: 1e-7,
            qp_max_iters: 5000,
            gamma_growth: 2.0,
            max_escalations: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.gamma, self.admm_rho, self.qp_tol];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!(
                "gamma, rho and qp_tol must be positive: {self:?}"
            )));
        }
        if self.qp_max_iters == 0 || !(self.gamma_growth > 1.0) {
            return Err(Error::Validation(format!(
                "qp_max_iters must be positive and gamma_growth > 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `Σ̂ = Z̃ᵀV(β̂, Z̃)Z̃ / n`.
///
/// With an intercept in the model the intercept direction is profiled out:
/// the design columns are centred with the weights `V` before forming the
/// Gram matrix. This is the Schur complement of the intercept block of the
/// joint information and reduces to the plain formula without intercept.
pub fn sigma_hat(fit: &FitResult, dataset: &Dataset, family: GlmFamily, cs: &ConstraintSet) -> Result<DMatrix<f64>> {
    let z = cs.reduce_design(&dataset.z)?;
    shape_check("coefficient length", z.ncols(), fit.beta.len())?;
    Ok(sigma_from_reduced(&z, fit, family, dataset.has_intercept))
}

fn sigma_from_reduced(z: &DMatrix<f64>, fit: &FitResult, family: GlmFamily, has_intercept: bool) -> DMatrix<f64> {
    let n = z.nrows() as f64;
    let eta = linear_predictor(z, &fit.beta, fit.intercept);
    let w = variance_weights(family, &eta);
    if !has_intercept {
        return weighted_gram(z, &w) / n;
    }
    let total = w.sum();
    let centred = if total > 0.0 {
        let means = z.tr_mul(&w) / total;
        let mut c = z.clone();
        for (mut col, &m) in c.column_iter_mut().zip(means.iter()) {
            col.add_scalar_mut(-m);
        }
        c
    } else {
        z.clone()
    };
    weighted_gram(&centred, &w) / n
}

/// Solution of one row program.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSolution {
    pub m: DVector<f64>,
    /// `γ` at which the returned `m` was obtained.
    pub gamma: f64,
    pub escalations: usize,
    /// ADMM iterations summed over all attempts.
    pub iters: usize,
    /// False when every escalation failed; `m` is then the last iterate.
    pub solved: bool,
    pub polished: bool,
}

impl RowSolution {
    pub fn objective(&self, sigma: &DMatrix<f64>) -> f64 {
        self.m.dot(&(sigma * &self.m))
    }
}

/// Eigendecomposition of `Σ̂` shared by all row programs.
#[derive(Debug, Clone)]
pub struct DebiasQp {
    sigma: DMatrix<f64>,
    q: DMatrix<f64>,
    eig: DVector<f64>,
    /// Projector onto the range of `Σ̂`.
    range_projector: DMatrix<f64>,
}

enum Attempt {
    Solved { m: DVector<f64>, iters: usize, polished: bool },
    Failed { m: DVector<f64>, iters: usize },
}

impl DebiasQp {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let p = sigma.nrows();
        shape_check("sigma columns", p, sigma.ncols())?;
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Inference("sigma has non-finite entries".into()));
        }
        let sym = (sigma + sigma.transpose()) * 0.5;
        let SymmetricEigen {
            eigenvectors,
            eigenvalues,
        } = SymmetricEigen::new(sym.clone());
        let top = eigenvalues.iter().cloned().fold(0.0, f64::max);
        let cutoff = 1e-12 * top.max(f64::MIN_POSITIVE);
        let eig = eigenvalues.map(|l| if l > cutoff { l } else { 0.0 });
        let mut kept = eigenvectors.clone();
        for (k, mut col) in kept.column_iter_mut().enumerate() {
            if eig[k] == 0.0 {
                col.fill(0.0);
            }
        }
        let range_projector = &kept * kept.transpose();
        Ok(DebiasQp {
            sigma: sym,
            q: eigenvectors,
            eig,
            range_projector,
        })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }

    /// Solves the row program, escalating `γ` on failure.
    pub fn solve_row(&self, target: &DVector<f64>, opts: &DebiasOptions) -> Result<RowSolution> {
        opts.validate()?;
        shape_check("target length", self.p(), target.len())?;
        let mut gamma = opts.gamma;
        let mut total_iters = 0;
        let mut last = DVector::zeros(self.p());
        for escalation in 0..=opts.max_escalations {
            match self.attempt(target, gamma, opts) {
                Attempt::Solved { m, iters, polished } => {
                    return Ok(RowSolution {
                        m,
                        gamma,
                        escalations: escalation,
                        iters: total_iters + iters,
                        solved: true,
                        polished,
                    });
                }
                Attempt::Failed { m, iters } => {
                    total_iters += iters;
                    last = m;
                    if escalation < opts.max_escalations {
                        let next = gamma * opts.gamma_growth;
                        log::info!("debias row program infeasible at gamma={gamma:.3e}; retrying at {next:.3e}");
                        gamma = next;
                    }
                }
            }
        }
        log::warn!("debias row program failed after {} escalations (gamma={gamma:.3e})", opts.max_escalations);
        Ok(RowSolution {
            m: last,
            gamma,
            escalations: opts.max_escalations,
            iters: total_iters,
            solved: false,
            polished: false,
        })
    }

    fn attempt(&self, target: &DVector<f64>, gamma: f64, opts: &DebiasOptions) -> Attempt {
        let p = self.p();
        let lo = target.add_scalar(-gamma);
        let hi = target.add_scalar(gamma);
        if target.amax() <= gamma {
            return Attempt::Solved {
                m: DVector::zeros(p),
                iters: 0,
                polished: false,
            };
        }

        let eps = opts.qp_tol;
        let alpha = 1.6;
        let mut rho = opts.admm_rho;
        let mut w = target.clone();
        let mut u = DVector::<f64>::zeros(p);
        let mut m = DVector::<f64>::zeros(p);
        let mut x = DVector::<f64>::zeros(p);
        let mut u_check = u.clone();
        let mut rho_check = rho;
        let mut converged = false;
        let mut iters = 0;
        let check_every = 10;

        for k in 1..=opts.qp_max_iters {
            iters = k;
            // m-update in the eigenbasis
            let c = self.q.tr_mul(&(&w - &u));
            let m_hat = DVector::from_iterator(
                p,
                c.iter()
                    .zip(self.eig.iter())
                    .map(|(&ci, &l)| if l > 0.0 { rho * ci / (2.0 + rho * l) } else { 0.0 }),
            );
            m = &self.q * &m_hat;
            x = &self.q * m_hat.component_mul(&self.eig);

            let relaxed = &x * alpha + &w * (1.0 - alpha);
            let w_prev = std::mem::replace(&mut w, clamp(&(&relaxed + &u), &lo, &hi));
            u += &relaxed - &w;

            if k % check_every != 0 {
                continue;
            }
            let y = &u * rho;
            let prim = (&x - &w).amax();
            let prim_scale = x.amax().max(w.amax());
            let sig_m2 = &x * 2.0;
            let sig_y = self.apply_sigma(&y);
            let dual = (&sig_m2 + &sig_y).amax();
            let dual_scale = sig_m2.amax().max(sig_y.amax());
            let _ = &w_prev;
            if prim <= eps + eps * prim_scale && dual <= eps + eps * dual_scale {
                converged = true;
                break;
            }

            // primal infeasibility certificate on the change of the dual
            let dy = &y - &u_check * rho_check;
            let dy_norm = dy.amax();
            if dy_norm > 0.0 {
                let support: f64 = dy
                    .iter()
                    .zip(lo.iter().zip(hi.iter()))
                    .map(|(&d, (&l, &h))| if d > 0.0 { h * d } else { l * d })
                    .sum();
                let infeas_eps = 1e-6;
                if self.apply_sigma(&dy).amax() <= infeas_eps * dy_norm && support < -infeas_eps * dy_norm {
                    break;
                }
            }
            u_check = u.clone();
            rho_check = rho;

            if k % (5 * check_every) == 0 && prim > 0.0 && dual > 0.0 {
                let ratio = ((prim / prim_scale.max(1e-300)) / (dual / dual_scale.max(1e-300))).sqrt();
                if !(0.2..=5.0).contains(&ratio) {
                    let new_rho = (rho * ratio).clamp(1e-6, 1e6);
                    u *= rho / new_rho;
                    u_check *= rho / new_rho;
                    rho = new_rho;
                    rho_check = rho;
                }
            }
        }

        let y = &u * rho;
        // a polished point satisfies the full KKT system, so it is optimal
        if let Some(polished) = self.polish(target, gamma, &y, &x) {
            return Attempt::Solved {
                m: polished,
                iters,
                polished: true,
            };
        }
        if converged {
            // ADMM stops with an O(qp_tol) gap between Σm and the box.
            let slack = (&x - &clamp(&x, &lo, &hi)).amax();
            if slack <= 1e-6 {
                return Attempt::Solved { m, iters, polished: false };
            }
        }
        Attempt::Failed { m, iters }
    }

    fn apply_sigma(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.q * self.q.tr_mul(v).component_mul(&self.eig)
    }

    /// Active-set refinement started from the ADMM dual. Returns a point
    /// that is primal feasible and satisfies the dual sign conditions, or
    /// `None` if the refinement does not settle.
    fn polish(&self, target: &DVector<f64>, gamma: f64, y: &DVector<f64>, x: &DVector<f64>) -> Option<DVector<f64>> {
        let p = self.p();
        let lo = target.add_scalar(-gamma);
        let hi = target.add_scalar(gamma);
        let ymax = y.amax();
        // +1 upper bound active, -1 lower bound active, 0 free
        let mut side: Vec<i8> = (0..p)
            .map(|j| {
                let tight = (x[j] - hi[j]).abs().min((x[j] - lo[j]).abs()) <= 1e-4 * gamma.max(1e-12);
                if y[j] > 1e-7 * ymax.max(1e-12) || (tight && y[j] > 0.0) {
                    1
                } else if y[j] < -1e-7 * ymax.max(1e-12) || (tight && y[j] < 0.0) {
                    -1
                } else {
                    0
                }
            })
            .collect();
        let feas_tol = 1e-10 * (1.0 + gamma);
        for _ in 0..4 * p + 10 {
            let active: Vec<usize> = (0..p).filter(|&j| side[j] != 0).collect();
            if active.is_empty() {
                // m = 0 is optimal only if it is feasible, handled earlier.
                return None;
            }
            let b = DVector::from_iterator(
                active.len(),
                active.iter().map(|&j| if side[j] > 0 { hi[j] } else { lo[j] }),
            );
            let sub = self.sigma.select_rows(&active).select_columns(&active);
            let nu = solve_consistent(&sub, &b)?;
            let mut m = DVector::zeros(p);
            for (k, &j) in active.iter().enumerate() {
                m[j] = nu[k];
            }
            let sx = &self.sigma * &m;

            // Dual sign: y_A = −2ν must agree with the active side.
            let worst_dual = active
                .iter()
                .enumerate()
                .map(|(k, &j)| (j, -(side[j] as f64) * nu[k]))
                .filter(|&(_, v)| v < -1e-12)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, _)) = worst_dual {
                side[j] = 0;
                continue;
            }
            let worst_primal = (0..p)
                .filter(|&j| side[j] == 0)
                .map(|j| {
                    if sx[j] > hi[j] + feas_tol {
                        (j, sx[j] - hi[j], 1)
                    } else if sx[j] < lo[j] - feas_tol {
                        (j, lo[j] - sx[j], -1)
                    } else {
                        (j, 0.0, 0)
                    }
                })
                .filter(|&(_, v, _)| v > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, _, s)) = worst_primal {
                side[j] = s;
                continue;
            }
            return Some(&self.range_projector * m);
        }
        None
    }
}

/// Solves `A x = b` for symmetric PSD `A`, accepting only consistent
/// systems (residual small relative to `b`).
fn solve_consistent(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if (a * &x - b).amax() <= 1e-10 * (1.0 + b.amax()) {
            return Some(x);
        }
    }
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.max();
    let x = svd.solve(b, 1e-12 * top.max(f64::MIN_POSITIVE)).ok()?;
    if (a * &x - b).amax() <= 1e-10 * (1.0 + b.amax()) {
        Some(x)
    } else {
        None
    }
}

fn clamp(v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        v.len(),
        v.iter().zip(lo.iter().zip(hi.iter())).map(|(&x, (&l, &h))| x.clamp(l, h)),
    )
}

/// Solves the row program for a given `Σ̂` and target `(I − P_C)e_i`.
pub fn solve_debias_row(
    sigma: &DMatrix<f64>,
    target: &DVector<f64>,
    gamma: f64,
    opts: &DebiasOptions,
) -> Result<RowSolution> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    let opts = DebiasOptions { gamma, ..opts.clone() };
    DebiasQp::new(sigma)?.solve_row(target, &opts)
}

/// `(I − P_C)e_i`
pub fn debias_target(cs: &ConstraintSet, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(cs.p());
    e[i] = 1.0;
    cs.project_in_place(&mut e);
    e
}

/// `M̃ = (I − P_C)M`: every column of `M` projected onto `S_C`.
pub fn build_m_tilde(m: &DMatrix<f64>, cs: &ConstraintSet) -> Result<DMatrix<f64>> {
    shape_check("M rows vs constraint dimension", cs.p(), m.nrows())?;
    if cs.rank() == 0 {
        return Ok(m.clone());
    }
    let c = cs.basis();
    Ok(m - c * c.tr_mul(m))
}

/// `β̂ᵘ = β̂ + (1/n)·M̃Z̃ᵀ(Y − μ(β̂, Z̃))`.
pub fn debias(
    fit: &FitResult,
    m_tilde: &DMatrix<f64>,
    dataset: &Dataset,
    family: GlmFamily,
    cs: &ConstraintSet,
) -> Result<DVector<f64>> {
    let z = cs.reduce_design(&dataset.z)?;
    shape_check("coefficient length", z.ncols(), fit.beta.len())?;
    shape_check("M̃ columns", z.ncols(), m_tilde.ncols())?;
    shape_check("M̃ rows", z.ncols(), m_tilde.nrows())?;
    Ok(debias_reduced(&z, fit, m_tilde, &dataset.y, family))
}

fn debias_reduced(
    z: &DMatrix<f64>,
    fit: &FitResult,
    m_tilde: &DMatrix<f64>,
    y: &DVector<f64>,
    family: GlmFamily,
) -> DVector<f64> {
    let eta = linear_predictor(z, &fit.beta, fit.intercept);
    let resid = DVector::from_iterator(
        y.len(),
        eta.iter().zip(y.iter()).map(|(&e, &yi)| yi - family.mean_unchecked(e)),
    );
    let n = z.nrows() as f64;
    &fit.beta + m_tilde * (z.tr_mul(&resid) / n)
}

/// `z_{1−α/2}`
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let std = Normal::standard();
    Ok(std.inverse_cdf(1.0 - alpha / 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub beta_u: DVector<f64>,
    pub m_tilde: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    pub alpha: f64,
    pub z_multiplier: f64,
    pub n: usize,
    /// Per coordinate; empty unless produced by [`infer`].
    pub rows: Vec<RowSolution>,
}

impl InferenceResult {
    /// True for coordinates whose interval excludes zero.
    pub fn selected(&self) -> Vec<bool> {
        self.ci_lower
            .iter()
            .zip(self.ci_upper.iter())
            .map(|(&l, &u)| l > 0.0 || u < 0.0)
            .collect()
    }

    /// Coordinates whose row program failed at every `γ`.
    pub fn missing(&self) -> Vec<bool> {
        if self.rows.is_empty() {
            vec![false; self.beta_u.len()]
        } else {
            self.rows.iter().map(|r| !r.solved).collect()
        }
    }

    pub fn ci_length(&self) -> DVector<f64> {
        &self.ci_upper - &self.ci_lower
    }
}

/// Wald intervals `β̂ᵘ_j ± z_{1−α/2}·√([M̃Σ̂M̃ᵀ]_jj / n)`.
pub fn confidence_intervals(
    beta_u: &DVector<f64>,
    m_tilde: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
    n: usize,
    alpha: f64,
) -> Result<InferenceResult> {
    let p = beta_u.len();
    shape_check("M̃ rows", p, m_tilde.nrows())?;
    shape_check("Σ̂ rows", m_tilde.ncols(), sigma_hat.nrows())?;
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    let z = normal_quantile(alpha)?;
    let ms = m_tilde * sigma_hat;
    let se = DVector::from_fn(p, |j, _| {
        let v = ms.row(j).dot(&m_tilde.row(j));
        let v = if v < 0.0 {
            if v < -1e-12 {
                log::warn!("negative variance {v:.3e} for coordinate {} clamped to zero", j + 1);
            }
            0.0
        } else {
            v
        };
        (v / n as f64).sqrt()
    });
    let half = &se * z;
    Ok(InferenceResult {
        ci_lower: beta_u - &half,
        ci_upper: beta_u + &half,
        beta_u: beta_u.clone(),
        m_tilde: m_tilde.clone(),
        sigma_hat: sigma_hat.clone(),
        std_errors: se,
        alpha,
        z_multiplier: z,
        n,
        rows: Vec::new(),
    })
}

/// Full de-biasing pipeline on a fitted model.
///
/// Coordinates whose row program fails at every `γ` get NaN standard errors
/// and intervals.
pub fn infer(
    fit: &FitResult,
    dataset: &Dataset,
    family: GlmFamily,
    cs: &ConstraintSet,
    opts: &DebiasOptions,
    alpha: f64,
) -> Result<InferenceResult> {
    opts.validate()?;
    let z = cs.reduce_design(&dataset.z)?;
    shape_check("coefficient length", z.ncols(), fit.beta.len())?;
    let sigma = sigma_from_reduced(&z, fit, family, dataset.has_intercept);
    let qp = DebiasQp::new(&sigma)?;
    let p = z.ncols();
    let rows = (0..p)
        .into_par_iter()
        .map(|i| qp.solve_row(&debias_target(cs, i), opts))
        .collect::<Result<Vec<_>>>()?;
    let m = DMatrix::from_fn(p, p, |i, j| rows[i].m[j]);
    let m_tilde = build_m_tilde(&m, cs)?;
    let beta_u = debias_reduced(&z, fit, &m_tilde, &dataset.y, family);
    let mut out = confidence_intervals(&beta_u, &m_tilde, qp.sigma(), dataset.n(), alpha)?;
    for (j, row) in rows.iter().enumerate() {
        if !row.solved {
            out.std_errors[j] = f64::NAN;
            out.ci_lower[j] = f64::NAN;
            out.ci_upper[j] = f64::NAN;
        }
    }
    out.rows = rows;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{fit as fit_model, SolverOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn zero_fit(p: usize) -> FitResult {
        FitResult {
            beta: DVector::zeros(p),
            intercept: 0.0,
            lambda: 0.1,
            iters: 1,
            objective_trace: vec![],
            converged: true,
            kkt_residual: 0.0,
            step: 1.0,
        }
    }

    #[test]
    fn sigma_hat_trivial_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = randn(&mut rng, 30, 4);
        let y = DVector::from_fn(30, |i, _| (i % 2) as f64);
        let ds = Dataset::new(y, z.clone(), false).unwrap();
        let free = ConstraintSet::unconstrained(4);
        let mut fit = zero_fit(4);
        fit.beta[0] = 0.4;
        let s = sigma_hat(&fit, &ds, GlmFamily::Gaussian, &free).unwrap();
        assert!((s - z.tr_mul(&z) / 30.0).amax() < 1e-12);
        let s = sigma_hat(&zero_fit(4), &ds, GlmFamily::Logistic, &free).unwrap();
        assert!((s - z.tr_mul(&z) / 120.0).amax() < 1e-12);
    }

    #[test]
    fn sigma_hat_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let z = randn(&mut rng, 25, 8);
            let y = DVector::from_fn(25, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
            let ds = Dataset::new(y, z, true).unwrap();
            let cs = ConstraintSet::sum_to_zero(8);
            let mut fit = zero_fit(8);
            fit.beta[1] = 0.7;
            fit.beta[2] = -0.7;
            let s = sigma_hat(&fit, &ds, GlmFamily::Logistic, &cs).unwrap();
            assert!((&s - s.transpose()).amax() < 1e-14);
            let ev = SymmetricEigen::new(s.clone()).eigenvalues;
            assert!(ev.min() >= -1e-10 * s.norm());
        }
    }

    #[test]
    fn row_program_zero_when_feasible() {
        let sigma = DMatrix::identity(3, 3) * 2.0;
        let target = DVector::from_vec(vec![0.05, 0.0, -0.02]);
        let sol = solve_debias_row(&sigma, &target, 0.1, &DebiasOptions::with_gamma(0.1)).unwrap();
        assert_eq!(sol.m, DVector::zeros(3));
        assert!(sol.solved);
    }

    #[test]
    fn row_program_identity_boundary() {
        let sigma = DMatrix::identity(4, 4);
        let mut target = DVector::zeros(4);
        target[0] = 1.0;
        let sol = solve_debias_row(&sigma, &target, 0.1, &DebiasOptions::with_gamma(0.1)).unwrap();
        let mut want = DVector::zeros(4);
        want[0] = 0.9;
        assert!((&sol.m - want).amax() < 1e-9, "{}", sol.m);
        assert_eq!(sol.escalations, 0);
    }

    #[test]
    fn row_program_escalates_when_infeasible() {
        // Σ has rank one, so Σm cannot approach e1 closely.
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let sigma = &v * v.transpose();
        let mut target = DVector::zeros(2);
        target[0] = 1.0;
        let sol = solve_debias_row(&sigma, &target, 0.1, &DebiasOptions::with_gamma(0.1)).unwrap();
        // The nearest reachable point is (0.5, 0.5): needs γ ≥ 0.5.
        assert!(sol.solved);
        assert!(sol.escalations >= 3, "{sol:?}");
        assert!(sol.gamma >= 0.5);
        let resid = (&sigma * &sol.m - &target).amax();
        assert!(resid <= sol.gamma + 1e-6);

        let opts = DebiasOptions {
            max_escalations: 1,
            ..DebiasOptions::with_gamma(0.01)
        };
        let sol = DebiasQp::new(&sigma).unwrap().solve_row(&target, &opts).unwrap();
        assert!(!sol.solved);
    }

    #[test]
    fn m_tilde_examples() {
        let m = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        assert_eq!(build_m_tilde(&m, &ConstraintSet::unconstrained(4)).unwrap(), m);
        let ones = DMatrix::from_element(4, 4, 1.0);
        let mt = build_m_tilde(&ones, &ConstraintSet::sum_to_zero(4)).unwrap();
        assert!(mt.amax() < 1e-15);
        let cs = ConstraintSet::sum_to_zero(4);
        let mt = build_m_tilde(&m, &cs).unwrap();
        let again = build_m_tilde(&mt, &cs).unwrap();
        assert!((again - &mt).amax() < 1e-12);
    }

    #[test]
    fn debias_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = randn(&mut rng, 20, 5);
        let cs = ConstraintSet::sum_to_zero(5);
        let mut fit = zero_fit(5);
        fit.beta = cs.project(&DVector::from_vec(vec![0.3, -0.1, 0.0, 0.2, 0.1])).unwrap();
        // noiseless gaussian
        let y = cs.reduce_design(&z).unwrap() * &fit.beta;
        let ds = Dataset::new(y, z.clone(), false).unwrap();
        let mt = DMatrix::from_fn(5, 5, |i, j| ((i + 2 * j) as f64).sin());
        let mt = build_m_tilde(&mt, &cs).unwrap();
        let bu = debias(&fit, &mt, &ds, GlmFamily::Gaussian, &cs).unwrap();
        assert!((bu - &fit.beta).amax() < 1e-12);

        let y = DVector::from_fn(20, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ds = Dataset::new(y, z, false).unwrap();
        let bu = debias(&fit, &DMatrix::zeros(5, 5), &ds, GlmFamily::Gaussian, &cs).unwrap();
        assert_eq!(bu, fit.beta);
        let bu = debias(&fit, &mt, &ds, GlmFamily::Gaussian, &cs).unwrap();
        assert!(cs.violation(&bu) < 1e-12);
    }

    #[test]
    fn identity_design_recovers_response() {
        let n = 6;
        let z = DMatrix::identity(n, n);
        let y = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.0, 0.3, 1.1]);
        let ds = Dataset::new(y.clone(), z, false).unwrap();
        let free = ConstraintSet::unconstrained(n);
        let mut fit = zero_fit(n);
        fit.beta = DVector::from_vec(vec![0.1, -0.2, 1.5, 0.0, 0.0, 0.6]);
        let sigma = sigma_hat(&fit, &ds, GlmFamily::Gaussian, &free).unwrap();
        // Σ̂ = I/n; with a generous γ the program returns M̃ = nI.
        let opts = DebiasOptions::with_gamma(1e-9);
        let qp = DebiasQp::new(&sigma).unwrap();
        let m = DMatrix::from_fn(n, n, |i, j| qp.solve_row(&debias_target(&free, i), &opts).unwrap().m[j]);
        assert!((&m - DMatrix::identity(n, n) * n as f64).amax() < 1e-5);
        let bu = debias(&fit, &m, &ds, GlmFamily::Gaussian, &free).unwrap();
        assert!((bu - y).amax() < 1e-5);
    }

    #[test]
    fn interval_construction() {
        assert!((normal_quantile(0.05).unwrap() - 1.959964).abs() < 1e-6);
        assert!(normal_quantile(0.0).is_err() && normal_quantile(1.0).is_err());
        let bu = DVector::from_vec(vec![1.0, 0.0, -0.5]);
        let mt = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let sig = DMatrix::identity(3, 3);
        let a = confidence_intervals(&bu, &mt, &sig, 100, 0.05).unwrap();
        let b = confidence_intervals(&bu, &mt, &sig, 400, 0.05).unwrap();
        assert!((a.ci_length() * 0.5 - b.ci_length()).amax() < 1e-12);
        assert!((a.std_errors[1] - 0.2).abs() < 1e-12);
        assert_eq!(a.selected(), vec![true, false, true]);
        for j in 0..3 {
            assert!(a.ci_lower[j] <= a.beta_u[j] && a.beta_u[j] <= a.ci_upper[j]);
        }
        // negative diagonal clamps to zero
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, 1.0]));
        let c = confidence_intervals(&bu, &DMatrix::identity(3, 3), &neg, 10, 0.05).unwrap();
        assert_eq!(c.std_errors[0], 0.0);
    }

    #[test]
    fn full_pipeline_preserves_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (n, p) = (200, 10);
        let z = randn(&mut rng, n, p);
        let truth = DVector::from_vec(vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.5, -0.5, 0.0, 0.0, 0.0]);
        let eta = &z * &truth;
        let y = eta.map(|e| if rng.random::<f64>() < crate::glm::expit(e) { 1.0 } else { 0.0 });
        let ds = Dataset::new(y, z, true).unwrap();
        let cs = crate::constraint::GroupConstraints::new(vec![(1..=5).collect(), (6..=10).collect()])
            .build(p)
            .unwrap();
        let fit = fit_model(&ds, GlmFamily::Logistic, &cs, 0.03, &SolverOptions::default()).unwrap();
        let res = infer(&fit, &ds, GlmFamily::Logistic, &cs, &DebiasOptions::with_gamma(3e-4), 0.05).unwrap();
        assert!(cs.violation(&res.beta_u) < 1e-8);
        for (i, row) in res.rows.iter().enumerate() {
            assert!(row.solved);
            let resid = (res.sigma_hat.clone() * &row.m - debias_target(&cs, i)).amax();
            assert!(resid <= row.gamma + 1e-6, "row {i}: {resid} vs {}", row.gamma);
        }
        assert!(res.std_errors.iter().all(|&s| s > 0.0));
    }
}
