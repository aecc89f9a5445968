//! Derivatives of the device disutility and the interior-point solver for
//! the per-device proximal subproblem.

pub mod barrier;
mod derivatives;
mod proximal;

use serde::{Deserialize, Serialize};

pub use derivatives::{
    curvature_terms, grad_disutility, hessian_disutility, CurvatureTerms, Gradient, Hessian,
};
pub(crate) use proximal::ProximalProblem;
pub use proximal::{
    best_response, solve_proximal, solve_proximal_from, ProximalSolution, START_FLOOR,
};

use crate::error::{Error, Result};
use crate::model::DELTA_STAB;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Initial barrier weight on the objective.
    pub barrier_t0: f64,
    /// Barrier weight multiplier per outer step.
    pub barrier_mu: f64,
    pub tol_kkt: f64,
    pub max_newton_iters: usize,
    pub delta_stab: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            barrier_t0: 1.0,
            barrier_mu: 10.0,
            tol_kkt: 1e-8,
            max_newton_iters: 1000,
            delta_stab: DELTA_STAB,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.barrier_mu > 1.0) {
            return Err(Error::InvalidParameter("barrier_mu must be > 1".into()));
        }
        if !(self.tol_kkt > 0.0 && self.barrier_t0 > 0.0) {
            return Err(Error::InvalidParameter(
                "tol_kkt and barrier_t0 must be > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.delta_stab) {
            return Err(Error::InvalidParameter(
                "delta_stab must lie in [0, 1)".into(),
            ));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::InvalidParameter(
                "max_newton_iters must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
