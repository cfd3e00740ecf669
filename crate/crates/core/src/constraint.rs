//! Linear zero-sum constraints `Cᵀβ = 0` on the coefficients.
//!
//! A [`ConstraintSet`] stores `C` with orthonormal columns, so the projector
//! onto `S_C = ker(Cᵀ)` is `u ↦ u − C(Cᵀu)`. The dense `p×p` projector is
//! never formed.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};

/// Relative singular-value threshold below which raw constraint directions
/// are treated as linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    c: DMatrix<f64>,
}

impl ConstraintSet {
    /// No constraints (`r = 0`).
    pub fn unconstrained(p: usize) -> Self {
        ConstraintSet {
            c: DMatrix::zeros(p, 0),
        }
    }

    /// The single all-ones constraint `Σ β_j = 0`.
    pub fn sum_to_zero(p: usize) -> Self {
        ConstraintSet {
            c: DMatrix::from_element(p, 1, 1.0 / (p as f64).sqrt()),
        }
    }

    /// Orthonormalizes a raw `p×r` constraint matrix, dropping directions
    /// beyond its numerical rank (with a warning).
    pub fn orthonormalize(raw: &DMatrix<f64>) -> Result<Self> {
        let (p, r) = raw.shape();
        if p == 0 {
            return Err(Error::Validation("constraint matrix has zero rows".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("constraint matrix has non-finite entries".into()));
        }
        if r == 0 {
            return Ok(Self::unconstrained(p));
        }
        let sigma_max = raw
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        let threshold = RANK_TOLERANCE * sigma_max;

        // Modified Gram-Schmidt with one re-orthogonalization pass keeps
        // already-orthonormal input unchanged.
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(r);
        for (j, col) in raw.column_iter().enumerate() {
            let mut v = col.into_owned();
            for _ in 0..2 {
                for q in &basis {
                    let coef = q.dot(&v);
                    v.axpy(-coef, q, 1.0);
                }
            }
            let norm = v.norm();
            if norm <= threshold || sigma_max == 0.0 {
                log::warn!(
                    "constraint column {} is linearly dependent on earlier columns and was dropped",
                    j + 1
                );
                continue;
            }
            basis.push(v / norm);
        }
        let c = if basis.is_empty() {
            DMatrix::zeros(p, 0)
        } else {
            DMatrix::from_columns(&basis)
        };
        Ok(ConstraintSet { c })
    }

    /// Orthonormal basis of the constraint directions, `p×r`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn rank(&self) -> usize {
        self.c.ncols()
    }

    /// `Cᵀu`
    pub fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        self.c.tr_mul(u)
    }

    /// Projects `u` onto `S_C`.
    pub fn project(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        shape_check("vector length vs constraint dimension", self.p(), u.len())?;
        let mut w = u.clone();
        self.project_in_place(&mut w);
        Ok(w)
    }

    pub(crate) fn project_in_place(&self, u: &mut DVector<f64>) {
        if self.rank() == 0 {
            return;
        }
        let coef = self.c.tr_mul(u);
        u.gemv(-1.0, &self.c, &coef, 1.0);
    }

    /// `Z(I − P_C)`: every row of `Z` projected onto `S_C`.
    pub fn reduce_design(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        shape_check("design columns vs constraint dimension", self.p(), z.ncols())?;
        if self.rank() == 0 {
            return Ok(z.clone());
        }
        let zc = z * &self.c;
        Ok(z - zc * self.c.transpose())
    }

    /// Largest absolute entry of `Cᵀβ`.
    pub fn violation(&self, beta: &DVector<f64>) -> f64 {
        if self.rank() == 0 {
            return 0.0;
        }
        self.c.tr_mul(beta).amax()
    }
}

/// Zero-sum constraints given as groups of 1-based coefficient indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupConstraints {
    pub groups: Vec<Vec<usize>>,
}

impl GroupConstraints {
    pub fn new(groups: Vec<Vec<usize>>) -> Self {
        GroupConstraints { groups }
    }

    /// Group of consecutive indices `first..=last` (1-based, inclusive).
    fn range(first: usize, last: usize) -> Vec<usize> {
        (first..=last).collect()
    }

    /// A single group holding every coefficient.
    pub fn single(p: usize) -> Self {
        GroupConstraints::new(vec![Self::range(1, p)])
    }

    /// The eight zero-sum groups of the simulation design; the last group is
    /// `{41..p}`. Requires `p ≥ 41`.
    pub fn simulation_true(p: usize) -> Result<Self> {
        if p < 41 {
            return Err(Error::Validation(format!("simulation groups need p >= 41, got {p}")));
        }
        Ok(GroupConstraints::new(vec![
            Self::range(1, 10),
            Self::range(11, 16),
            Self::range(17, 20),
            Self::range(21, 23),
            Self::range(24, 30),
            Self::range(31, 32),
            Self::range(33, 40),
            Self::range(41, p),
        ]))
    }

    /// The deliberately wrong grouping used to study misspecification.
    pub fn simulation_misspecified(p: usize) -> Result<Self> {
        if p < 31 {
            return Err(Error::Validation(format!("misspecified groups need p >= 31, got {p}")));
        }
        Ok(GroupConstraints::new(vec![
            Self::range(1, 4),
            Self::range(5, 12),
            Self::range(13, 23),
            Self::range(24, 30),
            Self::range(31, p),
        ]))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Validation(format!("constraint groups: {e}")))
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        for (g, group) in self.groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::Validation(format!("constraint group {} is empty", g + 1)));
            }
            if let Some(&bad) = group.iter().find(|&&i| i == 0 || i > p) {
                return Err(Error::Validation(format!(
                    "constraint group {} has index {bad} outside 1..={p}",
                    g + 1
                )));
            }
        }
        Ok(())
    }

    /// Raw `p×r` indicator matrix, one column per group.
    pub fn raw_matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        self.validate(p)?;
        let mut raw = DMatrix::zeros(p, self.groups.len());
        for (g, group) in self.groups.iter().enumerate() {
            for &i in group {
                raw[(i - 1, g)] = 1.0;
            }
        }
        Ok(raw)
    }

    pub fn build(&self, p: usize) -> Result<ConstraintSet> {
        ConstraintSet::orthonormalize(&self.raw_matrix(p)?)
    }
}

/// Builds the orthonormal constraint set for zero-sum groups.
pub fn build_group_constraints(gc: &GroupConstraints, p: usize) -> Result<ConstraintSet> {
    gc.build(p)
}
