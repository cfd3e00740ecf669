//! Accelerated proximal gradient for the ℓ1-penalized GLM under `Cᵀβ = 0`.
//!
//! Each iteration takes a gradient step on the averaged negative
//! log-likelihood at the momentum point, applies the proximal map of
//! `tλ‖·‖₁` restricted to `S_C`, and extrapolates with weight
//! `(k−1)/(k+r−1)`. The step size is found by backtracking from the
//! previously accepted value.
//!
//! The proximal map is solved exactly: `β = S_{tλ}(v − Cθ)` with the
//! multiplier `θ ∈ R^r` chosen so that `Cᵀβ = 0`. Thresholding first and
//! projecting afterwards is only exact when `θ = 0`.
//!
//! When the dataset carries an intercept, the solver works internally with
//! column-centred design columns and an intercept `a = b + z̄ᵀβ`. This is an
//! exact reparametrization of the same problem (penalty and constraint are
//! untouched) that removes the coupling between the intercept and large
//! column means.

use nalgebra::{DMatrix, DVector};

use crate::constraint::ConstraintSet;
use crate::error::{shape_check, Error, Result};
use crate::glm::{linear_predictor, neg_loglik_from_eta, Dataset, GlmFamily};

/// Default tolerance on the KKT residual required for convergence.
pub const KKT_TOLERANCE: f64 = 1e-4;
/// Number of consecutive small objective changes required for convergence.
const STALL_WINDOW: usize = 5;
/// Smallest admissible step before the line search gives up.
const MIN_STEP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative objective-change tolerance.
    pub tol: f64,
    /// Friction `r` of the momentum weight `(k−1)/(k+r−1)`.
    pub friction: f64,
    pub initial_step: f64,
    pub line_search: bool,
    /// KKT residual required, together with a stalled objective, to stop.
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 10_000,
            tol: 1e-8,
            friction: 10.0,
            initial_step: 1.0,
            line_search: true,
            kkt_tol: KKT_TOLERANCE,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Validation("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Validation("tol must be positive".into()));
        }
        if !(self.friction > 1.0) {
            return Err(Error::Validation("friction must exceed 1".into()));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::Validation("kkt_tol must be positive".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::Validation("initial step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: DVector<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub iters: usize,
    /// Penalized objective after every iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Step size accepted by the last line search.
    pub step: f64,
}

impl FitResult {
    /// Number of nonzero coefficients (intercept excluded).
    pub fn support_size(&self) -> usize {
        self.beta.iter().filter(|&&b| b != 0.0).count()
    }

    pub fn support(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Elementwise `sign(x)·max(|x| − t, 0)`.
pub fn soft_threshold(x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("threshold must be nonnegative, got {t}")));
    }
    Ok(x.map(|v| shrink(v, t)))
}

/// Entries exceeding the threshold by no more than this relative margin are
/// rounding noise and map to zero.
const SHRINK_MARGIN: f64 = 16.0 * f64::EPSILON;

#[inline]
fn shrink(v: f64, t: f64) -> f64 {
    if v.abs() <= t * (1.0 + SHRINK_MARGIN) {
        0.0
    } else if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Minimizes `½‖S_τ(a + Cη)‖²` over `η`, with a per-coordinate threshold
/// `τ_j ≥ 0`. The objective is convex and piecewise quadratic; a damped
/// semismooth Newton iteration finds the minimizer in a handful of steps.
pub(crate) fn threshold_multiplier(
    a: &DVector<f64>,
    tau: &DVector<f64>,
    c: &DMatrix<f64>,
    eta0: DVector<f64>,
) -> DVector<f64> {
    let r = c.ncols();
    let mut eta = eta0;
    if r == 0 {
        return eta;
    }
    let value = |eta: &DVector<f64>| -> (f64, DVector<f64>, DVector<f64>) {
        let mut x = a.clone();
        x.gemv(1.0, c, eta, 1.0);
        let s = DVector::from_iterator(x.len(), x.iter().zip(tau.iter()).map(|(&v, &t)| shrink(v, t)));
        (0.5 * s.norm_squared(), x, s)
    };
    let scale = a.amax().max(1.0);
    let tol = 1e-13 * scale;
    let (mut f, mut x, mut s) = value(&eta);
    for _ in 0..200 {
        let grad = c.tr_mul(&s);
        if grad.amax() <= tol {
            break;
        }
        let mut h = DMatrix::<f64>::zeros(r, r);
        for (j, (&xj, &tj)) in x.iter().zip(tau.iter()).enumerate() {
            if tj == 0.0 || xj.abs() > tj {
                let row = c.row(j);
                h.ger(1.0, &row.transpose(), &row.transpose(), 1.0);
            }
        }
        let ridge = 1e-12 * (h.trace() / r as f64).max(1e-300) + 1e-300;
        for i in 0..r {
            h[(i, i)] += ridge;
        }
        let dir = match h.cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => -grad.clone(),
        };
        let slope = grad.dot(&dir);
        if !(slope < 0.0) {
            break;
        }
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = &eta + &dir * alpha;
            let (ft, xt, st) = value(&trial);
            if ft <= f + 1e-4 * alpha * slope {
                eta = trial;
                f = ft;
                x = xt;
                s = st;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    eta
}

/// Exact constrained prox, also returning the multiplier `θ`.
pub(crate) fn prox_with_multiplier(
    v: &DVector<f64>,
    tau: f64,
    cs: &ConstraintSet,
    theta0: Option<&DVector<f64>>,
) -> (DVector<f64>, DVector<f64>) {
    let r = cs.rank();
    if r == 0 {
        return (v.map(|x| shrink(x, tau)), DVector::zeros(0));
    }
    if tau == 0.0 {
        let theta = cs.apply_transpose(v);
        let mut w = v.clone();
        cs.project_in_place(&mut w);
        return (w, theta);
    }
    let c = cs.basis();
    let neg_v = -v;
    let taus = DVector::from_element(v.len(), tau);
    let start = theta0.cloned().unwrap_or_else(|| c.tr_mul(v));
    let theta = threshold_multiplier(&neg_v, &taus, c, start);
    let mut shifted = v.clone();
    shifted.gemv(-1.0, c, &theta, 1.0);
    // entries at the multiplier's own accuracy are not part of the support
    let cut = MULTIPLIER_CUT * v.amax().max(1.0);
    let beta = shifted.map(|x| {
        let b = shrink(x, tau);
        if b.abs() <= cut {
            0.0
        } else {
            b
        }
    });
    (beta, theta)
}

/// Relative size below which a prox output entry is treated as zero.
const MULTIPLIER_CUT: f64 = 1e-12;

/// `argmin_{β ∈ S_C} { tλ‖β‖₁ + ½‖v − β‖² }`.
pub fn prox_step(v: &DVector<f64>, t: f64, lambda: f64, cs: &ConstraintSet) -> Result<DVector<f64>> {
    if !(t >= 0.0) || !(lambda >= 0.0) {
        return Err(Error::Domain(format!(
            "step and lambda must be nonnegative, got t={t}, lambda={lambda}"
        )));
    }
    shape_check("vector length vs constraint dimension", cs.p(), v.len())?;
    Ok(prox_with_multiplier(v, t * lambda, cs, None).0)
}

/// Outcome of one backtracking search.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchStep {
    pub step: f64,
    /// `y − t·G_t(y)`, the proximal point at the accepted step.
    pub point: DVector<f64>,
    /// Smooth objective at `point`.
    pub value: f64,
}

/// Backtracking on the sufficient-decrease condition
/// `g(y − tG_t(y)) ≤ g(y) − t∇g(y)ᵀG_t(y) + (t/2)‖G_t(y)‖²`,
/// halving `t` from `t_prev`.
///
/// `prox(v, t)` must return the proximal point of `t·h` at `v`.
pub fn line_search<G, P>(
    mut g_eval: G,
    mut prox: P,
    y: &DVector<f64>,
    g_y: f64,
    grad_y: &DVector<f64>,
    t_prev: f64,
) -> Result<LineSearchStep>
where
    G: FnMut(&DVector<f64>) -> f64,
    P: FnMut(&DVector<f64>, f64) -> DVector<f64>,
{
    if !(t_prev > 0.0) {
        return Err(Error::Domain(format!("initial step must be positive, got {t_prev}")));
    }
    shape_check("gradient length", y.len(), grad_y.len())?;
    let slack = 1e-14 * g_y.abs().max(1.0);
    let mut t = t_prev;
    loop {
        let mut v = y.clone();
        v.axpy(-t, grad_y, 1.0);
        let point = prox(&v, t);
        let diff = &point - y;
        let value = g_eval(&point);
        // −t∇gᵀG = ∇gᵀ(x⁺ − y) and (t/2)‖G‖² = ‖x⁺ − y‖²/(2t)
        let bound = g_y + grad_y.dot(&diff) + diff.norm_squared() / (2.0 * t);
        if value.is_finite() && value <= bound + slack {
            return Ok(LineSearchStep { step: t, point, value });
        }
        t *= 0.5;
        if t < MIN_STEP {
            return Err(Error::Solver(format!(
                "line search step underflowed below {MIN_STEP:e} (g(y) = {g_y}, last trial value = {value})"
            )));
        }
    }
}

/// Precomputed pieces of one penalized problem, shared across a λ path.
#[derive(Debug, Clone)]
pub struct Problem {
    family: GlmFamily,
    cs: ConstraintSet,
    y: DVector<f64>,
    /// `Z(I − P_C)`
    z_reduced: DMatrix<f64>,
    /// Reduced design used by the iteration (column-centred when an
    /// intercept is present).
    z_work: DMatrix<f64>,
    /// Column means of `z_reduced` (zero without intercept).
    col_means: DVector<f64>,
    has_intercept: bool,
}

impl Problem {
    pub fn new(dataset: &Dataset, family: GlmFamily, cs: &ConstraintSet) -> Result<Self> {
        dataset.validate_for(family)?;
        let z_reduced = cs.reduce_design(&dataset.z)?;
        let p = dataset.p();
        let (z_work, col_means) = if dataset.has_intercept {
            let means = DVector::from_iterator(p, z_reduced.column_iter().map(|c| c.mean()));
            let mut centred = z_reduced.clone();
            for (mut col, &m) in centred.column_iter_mut().zip(means.iter()) {
                col.add_scalar_mut(-m);
            }
            (centred, means)
        } else {
            (z_reduced.clone(), DVector::zeros(p))
        };
        Ok(Problem {
            family,
            cs: cs.clone(),
            y: dataset.y.clone(),
            z_reduced,
            z_work,
            col_means,
            has_intercept: dataset.has_intercept,
        })
    }

    pub fn family(&self) -> GlmFamily {
        self.family
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.cs
    }

    pub fn reduced_design(&self) -> &DMatrix<f64> {
        &self.z_reduced
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.z_reduced.ncols()
    }

    /// Intercept maximizing the likelihood at `β = 0`.
    pub fn null_intercept(&self) -> f64 {
        if self.has_intercept {
            self.family.link(self.y.mean())
        } else {
            0.0
        }
    }

    /// `‖P_C (1/n) Z̃ᵀ(Y − μ(0, b₀))‖∞`; any λ at or above it gives `β̂ = 0`.
    pub fn lambda_max(&self) -> f64 {
        let b0 = self.null_intercept();
        let resid = self.y.map(|yi| yi - self.family.mean_unchecked(b0));
        let mut g = self.z_reduced.tr_mul(&resid) / self.n() as f64;
        self.cs.project_in_place(&mut g);
        g.amax()
    }

    /// Averaged gradient of the smooth part with respect to `β` on the
    /// reduced design, and with respect to the intercept.
    pub fn gradient(&self, beta: &DVector<f64>, intercept: f64) -> (DVector<f64>, f64) {
        let eta = linear_predictor(&self.z_reduced, beta, intercept);
        let resid = self.residual(&eta);
        let n = self.n() as f64;
        (self.z_reduced.tr_mul(&resid) / n, resid.sum() / n)
    }

    /// `μ(η) − Y`
    fn residual(&self, eta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            eta.len(),
            eta.iter().zip(self.y.iter()).map(|(&e, &yi)| self.family.mean_unchecked(e) - yi),
        )
    }

    pub fn penalized_objective(&self, beta: &DVector<f64>, intercept: f64, lambda: f64) -> f64 {
        let eta = linear_predictor(&self.z_reduced, beta, intercept);
        neg_loglik_from_eta(self.family, &eta, &self.y) + lambda * beta.lp_norm(1)
    }

    /// KKT residual of a candidate solution; see [`kkt_residual`].
    pub fn kkt_residual(&self, beta: &DVector<f64>, intercept: f64, lambda: f64) -> f64 {
        let (g_beta, g_int) = self.gradient(beta, intercept);
        let (res, _) = kkt_residual(&g_beta, beta, lambda, &self.cs);
        if self.has_intercept {
            res.max(g_int.abs())
        } else {
            res
        }
    }

    /// Cold-started fit.
    pub fn fit(&self, lambda: f64, opts: &SolverOptions) -> Result<FitResult> {
        self.fit_from(lambda, opts, None)
    }

    /// Fit starting from a previous solution (warm start), or from
    /// `β = 0` with the null intercept.
    pub fn fit_from(&self, lambda: f64, opts: &SolverOptions, warm: Option<&FitResult>) -> Result<FitResult> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        opts.validate()?;
        let p = self.p();
        let n = self.n() as f64;

        // Packed parameter: p coefficients followed by the working intercept.
        let (beta0, b0, step0) = match warm {
            Some(w) => {
                shape_check("warm start length", p, w.beta.len())?;
                (w.beta.clone(), w.intercept, w.step.max(opts.initial_step * 1e-6))
            }
            None => (DVector::zeros(p), self.null_intercept(), opts.initial_step),
        };
        let a0 = if self.has_intercept { b0 + self.col_means.dot(&beta0) } else { 0.0 };
        let mut x = pack(&beta0, a0);
        let mut eta_x = self.eta_packed(&x);
        let mut x_prev = x.clone();
        let mut eta_prev = eta_x.clone();

        let smooth = |eta: &DVector<f64>| neg_loglik_from_eta(self.family, eta, &self.y);
        let objective = |x: &DVector<f64>, eta: &DVector<f64>| smooth(eta) + lambda * x.rows(0, p).lp_norm(1);

        let mut trace = Vec::new();
        let mut f_prev = objective(&x, &eta_x);
        let mut theta: Option<DVector<f64>> = None;
        let mut t = step0;
        let mut stall = 0usize;
        let mut converged = false;
        let mut kkt = f64::INFINITY;
        let mut iters = 0usize;

        for k in 1..=opts.max_iters {
            iters = k;
            let momentum = if k == 1 { 0.0 } else { (k as f64 - 1.0) / (k as f64 + opts.friction - 1.0) };
            let y = &x + (&x - &x_prev) * momentum;
            let eta_y = &eta_x + (&eta_x - &eta_prev) * momentum;
            let resid = self.residual(&eta_y);
            let mut grad = DVector::zeros(p + 1);
            grad.rows_mut(0, p).copy_from(&(self.z_work.tr_mul(&resid) / n));
            if self.has_intercept {
                grad[p] = resid.sum() / n;
            }
            let g_y = smooth(&eta_y);

            let mut eta_new = DVector::zeros(0);
            let mut theta_new = None;
            let step = if opts.line_search {
                line_search(
                    |pt| {
                        eta_new = self.eta_packed(pt);
                        smooth(&eta_new)
                    },
                    |v, t| {
                        let (point, th) = self.prox_packed(v, t * lambda, theta.as_ref().map(|eta| eta * t));
                        theta_new = Some(th / t);
                        point
                    },
                    &y,
                    g_y,
                    &grad,
                    t,
                )?
            } else {
                let mut v = y.clone();
                v.axpy(-t, &grad, 1.0);
                let (point, th) = self.prox_packed(&v, t * lambda, theta.as_ref().map(|eta| eta * t));
                theta_new = Some(th / t);
                eta_new = self.eta_packed(&point);
                let value = smooth(&eta_new);
                LineSearchStep { step: t, point, value }
            };
            t = step.step;
            theta = theta_new;
            x_prev = std::mem::replace(&mut x, step.point);
            eta_prev = std::mem::replace(&mut eta_x, eta_new);

            let f = step.value + lambda * x.rows(0, p).lp_norm(1);
            if !f.is_finite() {
                return Err(Error::Solver(format!("objective became non-finite at iteration {k}")));
            }
            trace.push(f);
            if (f_prev - f).abs() <= opts.tol * f.abs().max(1.0) {
                stall += 1;
            } else {
                stall = 0;
            }
            f_prev = f;

            if stall >= STALL_WINDOW && (stall - STALL_WINDOW) % 10 == 0 {
                kkt = self.kkt_packed(&x, &eta_x, lambda);
                if kkt <= opts.kkt_tol {
                    converged = true;
                    break;
                }
            }
        }

        let (beta, a) = unpack(&x, p);
        let intercept = if self.has_intercept { a - self.col_means.dot(&beta) } else { 0.0 };
        if !converged {
            kkt = self.kkt_packed(&x, &eta_x, lambda);
            converged = kkt <= opts.kkt_tol && stall >= STALL_WINDOW;
            if !converged {
                log::warn!(
                    "solver did not converge at lambda={lambda:.4e} after {iters} iterations (kkt residual {kkt:.3e})"
                );
            }
        }
        Ok(FitResult {
            beta,
            intercept,
            lambda,
            iters,
            objective_trace: trace,
            converged,
            kkt_residual: kkt,
            step: t,
        })
    }

    fn eta_packed(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.p();
        let mut eta = &self.z_work * x.rows(0, p);
        if self.has_intercept {
            eta.add_scalar_mut(x[p]);
        }
        eta
    }

    fn prox_packed(&self, v: &DVector<f64>, tau: f64, theta0: Option<DVector<f64>>) -> (DVector<f64>, DVector<f64>) {
        let p = self.p();
        let head = v.rows(0, p).into_owned();
        let (beta, theta) = prox_with_multiplier(&head, tau, &self.cs, theta0.as_ref());
        let a = if self.has_intercept { v[p] } else { 0.0 };
        (pack(&beta, a), theta)
    }

    fn kkt_packed(&self, x: &DVector<f64>, eta: &DVector<f64>, lambda: f64) -> f64 {
        let p = self.p();
        let resid = self.residual(eta);
        let n = self.n() as f64;
        let g_beta = self.z_work.tr_mul(&resid) / n;
        let beta = x.rows(0, p).into_owned();
        let (res, _) = kkt_residual(&g_beta, &beta, lambda, &self.cs);
        if self.has_intercept {
            res.max((resid.sum() / n).abs())
        } else {
            res
        }
    }
}

fn pack(beta: &DVector<f64>, a: f64) -> DVector<f64> {
    let p = beta.len();
    let mut x = DVector::zeros(p + 1);
    x.rows_mut(0, p).copy_from(beta);
    x[p] = a;
    x
}

fn unpack(x: &DVector<f64>, p: usize) -> (DVector<f64>, f64) {
    (x.rows(0, p).into_owned(), x[p])
}

/// KKT residual of the constrained Lasso at `β`, given the averaged
/// gradient of the smooth part.
///
/// With `q = ∇g + Cη̂` for the best multiplier `η̂`, the residual is the
/// largest of `|q_j + λ·sign(β_j)|` over nonzero coordinates and
/// `max(|q_j| − λ, 0)` over zero coordinates. Returns the residual and `η̂`.
pub fn kkt_residual(
    grad: &DVector<f64>,
    beta: &DVector<f64>,
    lambda: f64,
    cs: &ConstraintSet,
) -> (f64, DVector<f64>) {
    let shifted = DVector::from_iterator(
        grad.len(),
        grad.iter().zip(beta.iter()).map(|(&g, &b)| if b != 0.0 { g + lambda * b.signum() } else { g }),
    );
    let tau = beta.map(|b| if b != 0.0 { 0.0 } else { lambda });
    let eta0 = -cs.apply_transpose(grad);
    let eta = threshold_multiplier(&shifted, &tau, cs.basis(), eta0);
    let mut q = shifted;
    if cs.rank() > 0 {
        q.gemv(1.0, cs.basis(), &eta, 1.0);
    }
    let res = q.iter().zip(tau.iter()).map(|(&v, &t)| shrink(v, t).abs()).fold(0.0, f64::max);
    (res, eta)
}

/// KKT certificate evaluated from scratch on the original data:
/// `(residual, ‖Cᵀβ̂‖∞)`.
pub fn kkt_certificate(
    dataset: &Dataset,
    family: GlmFamily,
    cs: &ConstraintSet,
    fit: &FitResult,
) -> Result<(f64, f64)> {
    let z = cs.reduce_design(&dataset.z)?;
    shape_check("coefficient length", z.ncols(), fit.beta.len())?;
    let eta = linear_predictor(&z, &fit.beta, fit.intercept);
    let n = dataset.n() as f64;
    let resid = DVector::from_iterator(
        eta.len(),
        eta.iter().zip(dataset.y.iter()).map(|(&e, &y)| family.mean_unchecked(e) - y),
    );
    let grad = z.tr_mul(&resid) / n;
    let (mut res, _) = kkt_residual(&grad, &fit.beta, fit.lambda, cs);
    if dataset.has_intercept {
        res = res.max((resid.sum() / n).abs());
    }
    Ok((res, cs.violation(&fit.beta)))
}

/// Fits the constrained penalized GLM at a single λ.
pub fn fit(
    dataset: &Dataset,
    family: GlmFamily,
    cs: &ConstraintSet,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<FitResult> {
    Problem::new(dataset, family, cs)?.fit(lambda, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::GroupConstraints;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    /// Exact prox for one zero-sum group via bisection on the shift.
    fn single_group_prox_oracle(v: &DVector<f64>, tau: f64) -> DVector<f64> {
        let sum_at = |s: f64| v.iter().map(|&x| shrink(x - s, tau)).sum::<f64>();
        let (mut lo, mut hi) = (v.min() - tau - 1.0, v.max() + tau + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sum_at(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        v.map(|x| shrink(x - s, tau))
    }

    #[test]
    fn soft_threshold_values() {
        let x = DVector::from_vec(vec![3.0, -3.0, 0.5]);
        assert_eq!(soft_threshold(&x, 1.0).unwrap(), DVector::from_vec(vec![2.0, -2.0, 0.0]));
        assert_eq!(soft_threshold(&x, 0.0).unwrap(), x);
        assert!(matches!(soft_threshold(&x, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn prox_step_examples() {
        let cs = ConstraintSet::sum_to_zero(4);
        let v = DVector::from_vec(vec![4.0, -4.0, 1.0, -1.0]);
        let out = prox_step(&v, 1.0, 1.0, &cs).unwrap();
        assert!((out - DVector::from_vec(vec![3.0, -3.0, 0.0, 0.0])).amax() < 1e-12);

        let v = DVector::from_vec(vec![1.0, 5.0, -2.0, 0.3]);
        let out = prox_step(&v, 0.7, 0.0, &cs).unwrap();
        assert!((out - cs.project(&v).unwrap()).amax() < 1e-14);

        let free = ConstraintSet::unconstrained(4);
        let out = prox_step(&v, 0.5, 2.0, &free).unwrap();
        assert_eq!(out, soft_threshold(&v, 1.0).unwrap());

        assert!(prox_step(&v, -1.0, 1.0, &cs).is_err());
        assert!(prox_step(&DVector::zeros(3), 1.0, 1.0, &cs).is_err());
    }

    #[test]
    fn prox_matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cs = ConstraintSet::sum_to_zero(9);
        for _ in 0..200 {
            let v = DVector::from_fn(9, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal) + 0.8);
            let tau = rng.random_range(0.0..2.0);
            let got = prox_step(&v, 1.0, tau, &cs).unwrap();
            let want = single_group_prox_oracle(&v, tau);
            assert!((&got - &want).amax() < 1e-9, "{got} vs {want}");
            assert!(cs.violation(&got) < 1e-12);
        }
    }

    #[test]
    fn prox_is_optimal_for_grouped_constraints() {
        // Compare against each group's own exact prox (groups are disjoint).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gc = GroupConstraints::new(vec![vec![1, 2, 3, 4], vec![5, 6, 7], vec![8, 9, 10, 11, 12]]);
        let cs = gc.build(12).unwrap();
        for _ in 0..100 {
            let v = DVector::from_fn(12, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
            let tau = rng.random_range(0.0..1.5);
            let got = prox_step(&v, 1.0, tau, &cs).unwrap();
            for group in &gc.groups {
                let idx: Vec<usize> = group.iter().map(|i| i - 1).collect();
                let sub = DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]));
                let want = single_group_prox_oracle(&sub, tau);
                for (k, &i) in idx.iter().enumerate() {
                    assert!((got[i] - want[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn threshold_then_project_is_not_the_prox() {
        // Shows why the multiplier shift is needed.
        let cs = ConstraintSet::sum_to_zero(3);
        let v = DVector::from_vec(vec![3.0, 0.0, 0.0]);
        let naive = cs.project(&soft_threshold(&v, 1.0).unwrap()).unwrap();
        let exact = prox_step(&v, 1.0, 1.0, &cs).unwrap();
        let obj = |b: &DVector<f64>| b.lp_norm(1) + 0.5 * (&v - b).norm_squared();
        assert!(obj(&exact) < obj(&naive) - 1e-3);
        assert!(cs.violation(&exact) < 1e-12);
    }

    #[test]
    fn line_search_examples() {
        // g(β) = ½‖β‖², no penalty, y = (2, 0), start at t = 8.
        let g = |b: &DVector<f64>| 0.5 * b.norm_squared();
        let y = DVector::from_vec(vec![2.0, 0.0]);
        let grad = y.clone();
        let step = line_search(g, |v, _| v.clone(), &y, g(&y), &grad, 8.0).unwrap();
        assert!(step.step <= 2.0);
        let diff = &step.point - &y;
        let bound = g(&y) + grad.dot(&diff) + diff.norm_squared() / (2.0 * step.step);
        assert!(g(&step.point) <= bound + 1e-12);

        assert!(line_search(g, |v, _| v.clone(), &y, g(&y), &grad, 0.0).is_err());

        // g with no valid step: objective always larger than the bound.
        let err = line_search(|_| f64::INFINITY, |v, _| v.clone(), &y, 1.0, &grad, 1.0).unwrap_err();
        assert!(matches!(err, Error::Solver(_)));
    }

    #[test]
    fn line_search_accepts_unit_step_for_unit_lipschitz_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let z = randn(&mut rng, n, 6);
        // scale so that ‖Z‖²/n ≤ 1
        let sigma = z.clone().svd(false, false).singular_values.max();
        let z = z * ((n as f64).sqrt() / sigma);
        let yv = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ds = Dataset::new(yv, z, false).unwrap();
        let problem = Problem::new(&ds, GlmFamily::Gaussian, &ConstraintSet::unconstrained(6)).unwrap();
        let beta = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (grad, _) = problem.gradient(&beta, 0.0);
        let g = |b: &DVector<f64>| problem.penalized_objective(b, 0.0, 0.0);
        let lam = 0.1;
        let cs = ConstraintSet::unconstrained(6);
        let step = line_search(g, |v, t| prox_step(v, t, lam, &cs).unwrap(), &beta, g(&beta), &grad, 1.0).unwrap();
        assert_eq!(step.step, 1.0);
    }

    #[test]
    fn kkt_literal_projection_form_is_not_a_certificate() {
        // At a true constrained optimum the coordinatewise test with
        // q = P_C ∇g can fail, while the multiplier-adjusted one holds.
        // p = 3, one zero-sum group, β = (b, −b, 0): stationarity is
        // ∇g + λs = η·1 with s = (1, −1, s3).
        let lambda = 0.1;
        let beta = DVector::from_vec(vec![0.5, -0.5, 0.0]);
        let eta = 0.03;
        let s3 = 0.6;
        let grad = DVector::from_vec(vec![eta - lambda, eta + lambda, eta - lambda * s3]);
        let cs = ConstraintSet::sum_to_zero(3);
        let (res, _) = kkt_residual(&grad, &beta, lambda, &cs);
        assert!(res < 1e-12);
        let q = cs.project(&grad).unwrap();
        let literal = (q[0] + lambda).abs();
        assert!(literal > 1e-2);
    }

    #[test]
    fn fit_at_lambda_max_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = randn(&mut rng, 60, 8);
        let y = DVector::from_fn(60, |_, _| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
        for intercept in [false, true] {
            let ds = Dataset::new(y.clone(), z.clone(), intercept).unwrap();
            let cs = ConstraintSet::sum_to_zero(8);
            let problem = Problem::new(&ds, GlmFamily::Logistic, &cs).unwrap();
            let lmax = problem.lambda_max();
            let res = problem.fit(lmax, &SolverOptions::default()).unwrap();
            assert!(res.beta.iter().all(|&b| b == 0.0), "{}", res.beta);
            assert!(res.converged);
        }
    }

    #[test]
    fn orthogonal_design_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, p) = (50, 5);
        let q = randn(&mut rng, n, p).qr().q();
        let z = q * (n as f64).sqrt();
        let y = DVector::from_fn(n, |i, _| rng.sample::<f64, _>(StandardNormal) + if i % 3 == 0 { 1.0 } else { 0.0 });
        let ds = Dataset::new(y.clone(), z.clone(), false).unwrap();
        let cs = ConstraintSet::unconstrained(p);
        let lambda = 0.1;
        let res = fit(&ds, GlmFamily::Gaussian, &cs, lambda, &SolverOptions::default()).unwrap();
        let want = soft_threshold(&(z.tr_mul(&y) / n as f64), lambda).unwrap();
        assert!((res.beta - want).amax() < 1e-6);
        assert!(res.converged);
    }

    #[test]
    fn constrained_logistic_fit_satisfies_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (n, p) = (150, 12);
        let z = randn(&mut rng, n, p);
        let truth = DVector::from_fn(p, |j, _| match j {
            0 => 1.0,
            1 => -1.0,
            5 => 0.5,
            6 => -0.5,
            _ => 0.0,
        });
        let eta = &z * &truth;
        let y = eta.map(|e| if rng.random::<f64>() < crate::glm::expit(e - 0.5) { 1.0 } else { 0.0 });
        let ds = Dataset::new(y, z, true).unwrap();
        let cs = GroupConstraints::new(vec![(1..=5).collect(), (6..=12).collect()]).build(p).unwrap();
        let res = fit(&ds, GlmFamily::Logistic, &cs, 0.03, &SolverOptions::default()).unwrap();
        assert!(res.converged);
        let (kkt, feas) = kkt_certificate(&ds, GlmFamily::Logistic, &cs, &res).unwrap();
        assert!(kkt <= 1e-4, "kkt {kkt}");
        assert!(feas <= 1e-8);
        // objective trace settles monotonically after the early phase
        let tail = &res.objective_trace[res.objective_trace.len().min(50)..];
        for w in tail.windows(2) {
            assert!(w[1] <= w[0] + 1e-6);
        }
    }

    #[test]
    fn fixed_step_variant_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = randn(&mut rng, 80, 6) * 0.5;
        let y = DVector::from_fn(80, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ds = Dataset::new(y, z, true).unwrap();
        let cs = ConstraintSet::sum_to_zero(6);
        let opts = SolverOptions {
            line_search: false,
            initial_step: 0.5,
            ..SolverOptions::default()
        };
        let a = fit(&ds, GlmFamily::Gaussian, &cs, 0.05, &opts).unwrap();
        let b = fit(&ds, GlmFamily::Gaussian, &cs, 0.05, &SolverOptions::default()).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.beta - b.beta).amax() < 1e-4);
    }

    #[test]
    fn invalid_options_rejected() {
        let ds = Dataset::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::from_element(2, 2, 1.0), false).unwrap();
        let cs = ConstraintSet::unconstrained(2);
        let bad = SolverOptions {
            friction: 1.0,
            ..SolverOptions::default()
        };
        assert!(fit(&ds, GlmFamily::Logistic, &cs, 0.1, &bad).is_err());
        assert!(fit(&ds, GlmFamily::Logistic, &cs, -0.1, &SolverOptions::default()).is_err());
    }
}
