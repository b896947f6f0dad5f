//! Dense strictly convex QP solver for `min ½uᵀPu + qᵀu, lower <= Cu <= upper`.

mod dual_active_set;
mod kkt;

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use kkt::{kkt_residuals, KktResiduals};

use crate::error::Result;
use crate::qp::QpProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
    /// Terminated without violated constraints but the KKT residuals exceed the
    /// tolerance (numerical breakdown).
    Inaccurate,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Inaccurate => "inaccurate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u_star: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt: KktResiduals,
    /// Multiplier per constraint row: positive on an active upper bound, negative on
    /// an active lower bound.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    /// Objective after every primal move, starting at the unconstrained minimizer.
    /// Non-decreasing for this dual method.
    pub trace: Vec<f64>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Fails only when `P` is not positive definite or dimensions disagree; infeasibility
/// and budget exhaustion are reported through [`QpSolution::status`].
pub fn solve(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution> {
    dual_active_set::solve(problem, settings, None)
}

/// As [`solve`], trying the constraints that bind at `warm_start` first.
pub fn solve_warm(
    problem: &QpProblem,
    settings: &SolverSettings,
    warm_start: &DVector<f64>,
) -> Result<QpSolution> {
    dual_active_set::solve(problem, settings, Some(warm_start))
}
