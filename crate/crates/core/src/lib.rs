//! Penalized estimation and de-biased inference for generalized linear
//! models with compositional covariates under linear zero-sum constraints.

pub mod compositional;
pub mod constraint;
pub mod error;
pub mod glm;
pub mod harness;
pub mod report;
pub mod debias;
pub mod select;
pub mod solver;

pub use constraint::{ConstraintSet, GroupConstraints};
pub use error::{Error, Result};
pub use glm::{Dataset, GlmFamily};
pub use solver::{FitResult, Problem, SolverOptions};
