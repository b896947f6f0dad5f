use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::qp::QpProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `‖P u + q + Cᵀ y‖∞ / (1 + ‖q‖∞)`.
    pub stationarity: f64,
    /// Largest bound violation of `C u`.
    pub primal: f64,
    /// Largest multiplier-weighted slack, including multipliers of the wrong sign
    /// or attached to an infinite bound.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.primal <= tol && self.complementarity <= tol
    }
}

/// KKT residuals of `(u, y)` for `min ½uᵀPu + qᵀu, lower <= Cu <= upper`.
///
/// `y[i] > 0` prices the upper side of row `i`, `y[i] < 0` the lower side.
pub fn kkt_residuals(problem: &QpProblem, u: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
    let grad = &problem.p * u + &problem.q + problem.c.transpose() * y;
    let stationarity = grad.amax() / (1.0 + problem.q.amax());

    let cu = &problem.c * u;
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..cu.len() {
        let (lo, hi, x) = (problem.lower[i], problem.upper[i], cu[i]);
        primal = primal.max(lo - x).max(x - hi);
        let yi = y[i];
        let slack_term = if yi > 0.0 {
            if hi.is_finite() {
                yi * (hi - x).abs()
            } else {
                f64::INFINITY
            }
        } else if yi < 0.0 {
            if lo.is_finite() {
                -yi * (x - lo).abs()
            } else {
                f64::INFINITY
            }
        } else {
            0.0
        };
        complementarity = complementarity.max(slack_term);
    }
    KktResiduals {
        stationarity,
        primal: primal.max(0.0),
        complementarity,
    }
}
