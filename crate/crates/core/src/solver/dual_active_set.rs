//! Dual active-set method of Goldfarb and Idnani for strictly convex QPs.
//!
//! Starts at the unconstrained minimizer and repeatedly adds the most violated
//! constraint, dropping active inequalities whose multipliers would turn negative.
//! Every iterate is optimal for the constraints currently active, so the objective
//! never decreases along the iteration.
//!
//! Internally every finite bound becomes one inequality `nᵀx >= b`; rows with equal
//! bounds become an equality that is never dropped.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{kkt_residuals, QpSolution, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::qp::QpProblem;

#[derive(Debug, Clone, Copy)]
struct Constraint {
    row: usize,
    /// `+1` for `c·x >= lower` (and equalities), `−1` for `−c·x >= −upper`.
    sign: f64,
    rhs: f64,
    equality: bool,
}

struct Workspace<'a> {
    problem: &'a QpProblem,
    chol: Cholesky<f64, Dyn>,
    constraints: Vec<Constraint>,
    /// `L⁻¹ n_j` for every constraint.
    whitened: Vec<DVector<f64>>,
    active: Vec<usize>,
    lambda: Vec<f64>,
    x: DVector<f64>,
    trace: Vec<f64>,
}

/// Outcome of trying to add one constraint.
enum AddOutcome {
    Added,
    Infeasible,
    Budget,
}

impl<'a> Workspace<'a> {
    fn new(problem: &'a QpProblem) -> Result<Self> {
        let chol = problem
            .p
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("QP Hessian"))?;
        let mut constraints = Vec::new();
        for row in 0..problem.c.nrows() {
            let (lo, hi) = (problem.lower[row], problem.upper[row]);
            if lo == hi {
                constraints.push(Constraint { row, sign: 1.0, rhs: lo, equality: true });
                continue;
            }
            if lo.is_finite() {
                constraints.push(Constraint { row, sign: 1.0, rhs: lo, equality: false });
            }
            if hi.is_finite() {
                constraints.push(Constraint { row, sign: -1.0, rhs: -hi, equality: false });
            }
        }
        let l = chol.l();
        let whitened = constraints
            .iter()
            .map(|c| {
                let normal = problem.c.row(c.row).transpose() * c.sign;
                l.solve_lower_triangular(&normal).expect("cholesky factor is nonsingular")
            })
            .collect();
        let x = -chol.solve(&problem.q);
        let trace = vec![problem.objective(&x)];
        Ok(Self {
            problem,
            chol,
            constraints,
            whitened,
            active: Vec::new(),
            lambda: Vec::new(),
            x,
            trace,
        })
    }

    fn normal(&self, j: usize) -> DVector<f64> {
        let c = &self.constraints[j];
        self.problem.c.row(c.row).transpose() * c.sign
    }

    fn slack(&self, j: usize) -> f64 {
        self.normal(j).dot(&self.x) - self.constraints[j].rhs
    }

    /// Primal direction `z` (whitened residual and its back-transform) and the
    /// change `r` of the active multipliers per unit of the new multiplier.
    fn directions(&self, j: usize) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let wp = &self.whitened[j];
        let a = self.active.len();
        let (r, resid) = if a == 0 {
            (DVector::zeros(0), wp.clone())
        } else {
            let mut w = DMatrix::zeros(wp.len(), a);
            for (col, &k) in self.active.iter().enumerate() {
                w.set_column(col, &self.whitened[k]);
            }
            let qr = w.clone().qr();
            let qt = qr.q().transpose() * wp;
            let r = qr
                .r()
                .solve_upper_triangular(&qt)
                .unwrap_or_else(|| DVector::zeros(a));
            let resid = wp - &w * &r;
            (r, resid)
        };
        let z = self
            .chol
            .l()
            .tr_solve_lower_triangular(&resid)
            .expect("cholesky factor is nonsingular");
        (r, resid, z)
    }

    /// Largest dual step keeping active inequality multipliers non-negative, with the
    /// position in `active` that blocks it.
    fn dual_limit(&self, r: &DVector<f64>) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (pos, &k) in self.active.iter().enumerate() {
            if self.constraints[k].equality || r[pos] <= 0.0 {
                continue;
            }
            let t = self.lambda[pos] / r[pos];
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, pos));
            }
        }
        best
    }

    fn drop_active(&mut self, pos: usize) {
        self.active.remove(pos);
        self.lambda.remove(pos);
    }

    fn add(&mut self, j: usize, iterations: &mut usize, max_iter: usize) -> AddOutcome {
        let equality = self.constraints[j].equality;
        let mut lambda_new = 0.0;
        loop {
            if *iterations >= max_iter {
                return AddOutcome::Budget;
            }
            *iterations += 1;
            let s = self.slack(j);
            let (r, resid, z) = self.directions(j);
            let wp_norm = self.whitened[j].norm();
            let dependent = resid.norm() <= 1e-11 * wp_norm.max(1.0);
            let limit = self.dual_limit(&r);

            if dependent {
                if equality && s.abs() <= 1e-14 * (1.0 + self.constraints[j].rhs.abs()) {
                    return AddOutcome::Added;
                }
                // Only the multipliers move; `x` stays put.
                let Some((t, pos)) = limit else {
                    return AddOutcome::Infeasible;
                };
                for (l, ri) in self.lambda.iter_mut().zip(r.iter()) {
                    *l -= t * ri;
                }
                lambda_new += t;
                self.drop_active(pos);
                continue;
            }

            let curvature = resid.norm_squared();
            let full = -s / curvature;
            let step = match limit {
                Some((t1, _)) if !equality && t1 < full => t1,
                _ => full,
            };
            self.x.axpy(step, &z, 1.0);
            for (l, ri) in self.lambda.iter_mut().zip(r.iter()) {
                *l -= step * ri;
            }
            lambda_new += step;
            self.trace.push(self.problem.objective(&self.x));

            if step == full {
                self.active.push(j);
                self.lambda.push(lambda_new);
                return AddOutcome::Added;
            }
            let (_, pos) = limit.expect("partial step implies a blocking constraint");
            self.drop_active(pos);
        }
    }

    /// Multipliers per row of `C`, signed as in [`kkt_residuals`].
    fn row_multipliers(&self, lambda: &[f64]) -> DVector<f64> {
        let mut y = DVector::zeros(self.problem.c.nrows());
        for (&k, &l) in self.active.iter().zip(lambda) {
            let c = &self.constraints[k];
            y[c.row] -= c.sign * l;
        }
        y
    }

    /// Re-solves the equality-constrained problem on the final active set.
    fn polished(&self) -> Option<(DVector<f64>, Vec<f64>)> {
        let a = self.active.len();
        if a == 0 {
            return Some((-self.chol.solve(&self.problem.q), Vec::new()));
        }
        let n = self.x.len();
        let mut w = DMatrix::zeros(n, a);
        let mut rhs = DVector::zeros(a);
        let lq = self.chol.l().solve_lower_triangular(&self.problem.q)?;
        for (col, &k) in self.active.iter().enumerate() {
            w.set_column(col, &self.whitened[k]);
            rhs[col] = self.constraints[k].rhs + self.whitened[k].dot(&lq);
        }
        let lambda = (w.transpose() * &w).cholesky()?.solve(&rhs);
        let x = self.chol.l().tr_solve_lower_triangular(&(&w * &lambda - lq))?;
        let ok = self
            .active
            .iter()
            .zip(lambda.iter())
            .all(|(&k, &l)| self.constraints[k].equality || l >= 0.0);
        ok.then(|| (x, lambda.iter().copied().collect()))
    }
}

pub(super) fn solve(
    problem: &QpProblem,
    settings: &SolverSettings,
    warm_start: Option<&DVector<f64>>,
) -> Result<QpSolution> {
    let dim = problem.dim();
    let rows = problem.c.nrows();
    if problem.p.shape() != (dim, dim) || problem.c.ncols() != dim {
        return Err(Error::DimensionMismatch {
            what: "QP matrices",
            expected: dim,
            found: problem.p.nrows(),
        });
    }
    if problem.lower.len() != rows || problem.upper.len() != rows {
        return Err(Error::DimensionMismatch {
            what: "QP bounds",
            expected: rows,
            found: problem.lower.len(),
        });
    }
    let mut ws = Workspace::new(problem)?;

    let infeasible = |ws: &Workspace, iterations| {
        let y = DVector::zeros(rows);
        QpSolution {
            objective: problem.objective(&ws.x),
            kkt: kkt_residuals(problem, &ws.x, &y),
            u_star: ws.x.clone(),
            multipliers: y,
            status: SolveStatus::Infeasible,
            iterations,
            trace: ws.trace.clone(),
        }
    };
    if (0..rows).any(|i| problem.lower[i] > problem.upper[i] || problem.lower[i].is_nan()) {
        return Ok(infeasible(&ws, 0));
    }

    // Constraints binding at the warm start are tried first.
    let preferred: Vec<bool> = match warm_start {
        Some(w) if w.len() == dim => {
            let cw = &problem.c * w;
            ws.constraints
                .iter()
                .map(|c| {
                    let v = c.sign * cw[c.row] - c.rhs;
                    v.abs() <= 1e-6 * (1.0 + c.rhs.abs())
                })
                .collect()
        }
        _ => vec![false; ws.constraints.len()],
    };

    let feas_tol = settings.tol * 1e-3;
    let mut iterations = 0;
    let mut status = SolveStatus::Optimal;

    for j in 0..ws.constraints.len() {
        if ws.constraints[j].equality {
            match ws.add(j, &mut iterations, settings.max_iter) {
                AddOutcome::Added => {}
                AddOutcome::Infeasible => return Ok(infeasible(&ws, iterations)),
                AddOutcome::Budget => {
                    status = SolveStatus::MaxIterations;
                    break;
                }
            }
        }
    }

    while status == SolveStatus::Optimal {
        let mut pick: Option<(bool, f64, usize)> = None;
        for j in 0..ws.constraints.len() {
            if ws.constraints[j].equality || ws.active.contains(&j) {
                continue;
            }
            let s = ws.slack(j);
            if s >= -feas_tol {
                continue;
            }
            let key = (preferred[j], -s);
            if pick.is_none_or(|(p, v, _)| (key.0, key.1) > (p, v)) {
                pick = Some((key.0, key.1, j));
            }
        }
        let Some((_, _, j)) = pick else { break };
        match ws.add(j, &mut iterations, settings.max_iter) {
            AddOutcome::Added => {}
            AddOutcome::Infeasible => return Ok(infeasible(&ws, iterations)),
            AddOutcome::Budget => status = SolveStatus::MaxIterations,
        }
    }

    let mut lambda = ws.lambda.clone();
    if status == SolveStatus::Optimal {
        if let Some((x, l)) = ws.polished() {
            if problem.max_violation(&x) <= problem.max_violation(&ws.x).max(feas_tol) {
                ws.x = x;
                lambda = l;
            }
        }
    }
    let y = ws.row_multipliers(&lambda);
    let kkt = kkt_residuals(problem, &ws.x, &y);
    if status == SolveStatus::Optimal && !kkt.within(settings.tol) {
        status = SolveStatus::Inaccurate;
    }
    Ok(QpSolution {
        objective: problem.objective(&ws.x),
        u_star: ws.x,
        multipliers: y,
        status,
        kkt,
        iterations,
        trace: ws.trace,
    })
}
