//! λ paths and EBIC tuning.

use rayon::prelude::*;

use crate::constraint::ConstraintSet;
use crate::error::{Error, Result};
use crate::glm::{neg_loglik, Dataset, GlmFamily};
use crate::solver::{FitResult, Problem, SolverOptions};

/// Number of grid points used when none is given.
pub const DEFAULT_GRID_SIZE: usize = 50;
/// Smallest grid value as a fraction of `lambda_max`.
pub const GRID_FLOOR_RATIO: f64 = 0.01;
/// `γ = GAMMA_FRACTION · λ_opt` for the de-biasing program.
pub const GAMMA_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathMode {
    /// Sequential, each fit started from the previous solution.
    #[default]
    WarmStart,
    /// Every grid point fitted from scratch, in parallel.
    ColdParallel,
}

#[derive(Debug, Clone)]
pub struct PathResult {
    /// Strictly decreasing.
    pub lambdas: Vec<f64>,
    pub fits: Vec<FitResult>,
    pub ebic_values: Vec<f64>,
    pub selected_index: usize,
    pub xi: f64,
}

impl PathResult {
    pub fn selected(&self) -> &FitResult {
        &self.fits[self.selected_index]
    }

    pub fn lambda_opt(&self) -> f64 {
        self.lambdas[self.selected_index]
    }
}

pub fn lambda_max(dataset: &Dataset, family: GlmFamily, cs: &ConstraintSet) -> Result<f64> {
    Ok(Problem::new(dataset, family, cs)?.lambda_max())
}

/// `ξ = 1 − 1/(2δ)` with `p = n^δ`; `δ` is clamped below at 0.5 so that
/// `ξ ∈ [0, 1]`.
pub fn xi_rule(n: usize, p: usize) -> f64 {
    if n <= 1 || p <= 1 {
        return if p <= 1 { 0.0 } else { 1.0 };
    }
    let delta = ((p as f64).ln() / (n as f64).ln()).max(0.5);
    1.0 - 1.0 / (2.0 * delta)
}

/// `−2ℓ(β̂) + ν·log n + 2ν·ξ·log p`, `ν` the number of nonzero coefficients.
pub fn ebic(fit: &FitResult, dataset: &Dataset, family: GlmFamily, xi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::Domain(format!("xi must lie in [0, 1], got {xi}")));
    }
    let n = dataset.n() as f64;
    let p = dataset.p() as f64;
    let nll = neg_loglik(family, &fit.beta, fit.intercept, &dataset.y, &dataset.z)?;
    let nu = fit.support_size() as f64;
    Ok(2.0 * n * nll + nu * n.ln() + 2.0 * nu * xi * p.ln())
}

/// Descending log-spaced grid from `lambda_max` to `GRID_FLOOR_RATIO·lambda_max`.
pub fn lambda_grid(lambda_max: f64, grid_size: usize) -> Result<Vec<f64>> {
    if grid_size < 2 {
        return Err(Error::Validation(format!("grid size must be at least 2, got {grid_size}")));
    }
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::Selection(format!(
            "lambda_max must be positive and finite, got {lambda_max}"
        )));
    }
    let last = (grid_size - 1) as f64;
    Ok((0..grid_size)
        .map(|k| lambda_max * GRID_FLOOR_RATIO.powf(k as f64 / last))
        .collect())
}

/// Fits the whole grid.
pub fn fit_path(problem: &Problem, lambdas: &[f64], opts: &SolverOptions, mode: PathMode) -> Result<Vec<FitResult>> {
    match mode {
        PathMode::WarmStart => {
            let mut fits: Vec<FitResult> = Vec::with_capacity(lambdas.len());
            for &lambda in lambdas {
                let fit = problem.fit_from(lambda, opts, fits.last())?;
                fits.push(fit);
            }
            Ok(fits)
        }
        PathMode::ColdParallel => lambdas.par_iter().map(|&l| problem.fit(l, opts)).collect(),
    }
}

/// EBIC selection over a λ path.
///
/// Only the first (largest-λ) converged fit of each support size is a
/// candidate, so that there is one model per size; ties go to the larger λ.
pub fn select_lambda(
    dataset: &Dataset,
    family: GlmFamily,
    cs: &ConstraintSet,
    grid_size: usize,
    opts: &SolverOptions,
) -> Result<PathResult> {
    select_lambda_with(dataset, family, cs, grid_size, opts, PathMode::WarmStart)
}

pub fn select_lambda_with(
    dataset: &Dataset,
    family: GlmFamily,
    cs: &ConstraintSet,
    grid_size: usize,
    opts: &SolverOptions,
    mode: PathMode,
) -> Result<PathResult> {
    let problem = Problem::new(dataset, family, cs)?;
    let lambdas = lambda_grid(problem.lambda_max(), grid_size)?;
    let fits = fit_path(&problem, &lambdas, opts, mode)?;
    let xi = xi_rule(dataset.n(), dataset.p());
    let ebic_values = fits
        .iter()
        .map(|f| ebic(f, dataset, family, xi))
        .collect::<Result<Vec<_>>>()?;

    let mut seen_sizes = std::collections::HashSet::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, (fit, &value)) in fits.iter().zip(&ebic_values).enumerate() {
        if !fit.converged || !seen_sizes.insert(fit.support_size()) {
            continue;
        }
        if best.is_none_or(|(_, b)| value < b) {
            best = Some((i, value));
        }
    }
    let (selected_index, _) = best.ok_or_else(|| Error::Selection("no fit on the lambda path converged".into()))?;
    Ok(PathResult {
        lambdas,
        fits,
        ebic_values,
        selected_index,
        xi,
    })
}

/// `γ = 0.01·λ_opt`.
pub fn gamma_rule(lambda_opt: f64) -> Result<f64> {
    if !(lambda_opt > 0.0) || !lambda_opt.is_finite() {
        return Err(Error::Domain(format!("lambda_opt must be positive, got {lambda_opt}")));
    }
    Ok(GAMMA_FRACTION * lambda_opt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::expit;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn logistic_data(seed: u64, n: usize, p: usize, signal: &[f64]) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut beta = DVector::zeros(p);
        for (j, &b) in signal.iter().enumerate() {
            beta[j] = b;
        }
        let eta = &z * &beta;
        let y = eta.map(|e| if rng.random::<f64>() < expit(e) { 1.0 } else { 0.0 });
        Dataset::new(y, z, true).unwrap()
    }

    #[test]
    fn xi_rule_values() {
        assert!((xi_rule(100, 100) - 0.5).abs() < 1e-15);
        // p < √n clamps δ at 0.5, giving ξ = 0
        assert_eq!(xi_rule(10_000, 20), 0.0);
        let x = xi_rule(500, 50);
        assert!((0.0..=1.0).contains(&x));
    }

    #[test]
    fn gamma_rule_values() {
        assert_eq!(gamma_rule(1.0).unwrap(), 0.01);
        assert!((gamma_rule(0.2).unwrap() - 0.002).abs() < 1e-18);
        assert!(gamma_rule(0.0).is_err());
        assert!(gamma_rule(-1.0).is_err());
    }

    #[test]
    fn lambda_max_trivial_values() {
        // Y equal to the fitted null mean gives zero residual.
        let z = DMatrix::from_fn(6, 3, |i, j| (i + j) as f64);
        let y = DVector::from_element(6, 2.5);
        let ds = Dataset::new(y, z.clone(), true).unwrap();
        let lm = lambda_max(&ds, GlmFamily::Gaussian, &ConstraintSet::unconstrained(3)).unwrap();
        assert!(lm.abs() < 1e-12);

        // Gaussian, centred Y, no intercept, no constraints.
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.5, 1.5, -1.5]);
        let ds = Dataset::new(y.clone(), z.clone(), false).unwrap();
        let lm = lambda_max(&ds, GlmFamily::Gaussian, &ConstraintSet::unconstrained(3)).unwrap();
        assert!((lm - (z.tr_mul(&y) / 6.0).amax()).abs() < 1e-12);
    }

    #[test]
    fn fit_above_lambda_max_is_zero() {
        for seed in 0..20 {
            let ds = logistic_data(seed, 80, 10, &[1.0, -1.0, 0.5]);
            let cs = ConstraintSet::sum_to_zero(10);
            let lm = lambda_max(&ds, GlmFamily::Logistic, &cs).unwrap();
            let fit = crate::solver::fit(&ds, GlmFamily::Logistic, &cs, 1.01 * lm, &SolverOptions::default()).unwrap();
            assert_eq!(fit.support_size(), 0, "seed {seed}");
        }
    }

    #[test]
    fn ebic_reductions() {
        let ds = logistic_data(1, 100, 100, &[1.0, -1.0]);
        let fit = FitResult {
            beta: DVector::zeros(100),
            intercept: 0.0,
            lambda: 1.0,
            iters: 0,
            objective_trace: vec![],
            converged: true,
            kkt_residual: 0.0,
            step: 1.0,
        };
        let ll0 = 2.0 * 100.0 * std::f64::consts::LN_2;
        assert!((ebic(&fit, &ds, GlmFamily::Logistic, 0.7).unwrap() - ll0).abs() < 1e-10);

        let mut sparse = fit.clone();
        sparse.beta[0] = 0.3;
        sparse.beta[1] = -0.3;
        let nll = neg_loglik(GlmFamily::Logistic, &sparse.beta, 0.0, &ds.y, &ds.z).unwrap();
        let bic = 200.0 * nll + 2.0 * (100f64).ln();
        assert!((ebic(&sparse, &ds, GlmFamily::Logistic, 0.0).unwrap() - bic).abs() < 1e-9);
        let with_xi = ebic(&sparse, &ds, GlmFamily::Logistic, 0.5).unwrap();
        assert!((with_xi - bic - 2.0 * 2.0 * 0.5 * (100f64).ln()).abs() < 1e-9);
        assert!(ebic(&sparse, &ds, GlmFamily::Logistic, 1.5).is_err());
    }

    #[test]
    fn path_endpoints_and_selection() {
        let ds = logistic_data(3, 300, 12, &[1.2, -1.2, 0.8, -0.8]);
        let cs = ConstraintSet::sum_to_zero(12);
        let path = select_lambda(&ds, GlmFamily::Logistic, &cs, 20, &SolverOptions::default()).unwrap();
        assert_eq!(path.lambdas.len(), 20);
        assert!(path.lambdas.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(path.fits[0].support_size(), 0);
        let nll0 = neg_loglik(GlmFamily::Logistic, &path.fits[0].beta, path.fits[0].intercept, &ds.y, &ds.z).unwrap();
        assert!((path.ebic_values[0] - 600.0 * nll0).abs() < 1e-8);
        let chosen = path.selected().support();
        for j in 0..4 {
            assert!(chosen.contains(&j), "missing {j} in {chosen:?}");
        }
        assert!(path.selected().converged);
        // deterministic
        let again = select_lambda(&ds, GlmFamily::Logistic, &cs, 20, &SolverOptions::default()).unwrap();
        assert_eq!(again.selected_index, path.selected_index);
        assert_eq!(again.ebic_values, path.ebic_values);
    }

    #[test]
    fn warm_and_cold_paths_agree() {
        for seed in 0..10 {
            let ds = logistic_data(100 + seed, 120, 8, &[1.0, -0.5, 0.0, 0.5]);
            let cs = ConstraintSet::sum_to_zero(8);
            let problem = Problem::new(&ds, GlmFamily::Logistic, &cs).unwrap();
            let grid = lambda_grid(problem.lambda_max(), 10).unwrap();
            let opts = SolverOptions {
                kkt_tol: 1e-9,
                ..SolverOptions::default()
            };
            let warm = fit_path(&problem, &grid, &opts, PathMode::WarmStart).unwrap();
            let cold = fit_path(&problem, &grid, &opts, PathMode::ColdParallel).unwrap();
            for (a, b) in warm.iter().zip(&cold) {
                assert!((&a.beta - &b.beta).amax() < 1e-6, "seed {seed} lambda {}", a.lambda);
            }
        }
    }

    #[test]
    fn grid_validation() {
        assert!(lambda_grid(1.0, 1).is_err());
        assert!(matches!(lambda_grid(0.0, 5), Err(Error::Selection(_))));
        let g = lambda_grid(2.0, 3).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-15 && (g[1] - 0.2).abs() < 1e-15 && (g[2] - 0.02).abs() < 1e-15);
    }
}
