//! The receding-horizon tracking problem as a dense quadratic program.

mod builder;
pub mod oracle;

use nalgebra::{DMatrix, DVector};

pub use builder::{
    assemble_qp, build_f, build_g, build_h, build_rbar, expected_b, expected_outer_b,
    extract_control, q1_recursion, q2_recursion, QpBuildContext,
};
pub use oracle::build_qp_oracle;

/// `min ½ Uᵀ P U + qᵀ U` subject to `lower <= C U <= upper`.
///
/// Infinite bounds are allowed and mean the side is unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub c: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.p * u)) + self.q.dot(u)
    }

    /// Gradient `P U + q`.
    pub fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.p * u + &self.q
    }

    /// Largest bound violation of `C u`.
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        let cu = &self.c * u;
        cu.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(x, (lo, hi))| (lo - x).max(x - hi).max(0.0))
            .fold(0.0, f64::max)
    }
}
