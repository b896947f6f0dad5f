use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};

/// Relative residual norm below which a regressor column counts as linearly dependent.
const RANK_TOL: f64 = 1e-10;

/// `η(k+1) = ν + A1 η(k) + A2 η(k−1) + ω(k+1)`, `Cov ω = σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Var2Model {
    pub nu: DVector<f64>,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Number of regression rows used in the fit (zero for hand-built models).
    pub n_obs: usize,
}

impl Var2Model {
    pub fn new(nu: DVector<f64>, a1: DMatrix<f64>, a2: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = nu.len();
        if n == 0 {
            return Err(Error::InvalidParameter("VAR model needs at least one series".into()));
        }
        for (what, m) in [("A1", &a1), ("A2", &a2), ("sigma", &sigma)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidParameter(format!(
                    "{what} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        ensure_finite(
            "VAR coefficients",
            nu.iter().chain(a1.iter()).chain(a2.iter()).chain(sigma.iter()),
        )?;
        Ok(Self {
            nu,
            a1,
            a2,
            sigma: symmetrize(&sigma),
            n_obs: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    /// `[[A1, A2], [I, 0]]`, the state matrix of the stacked first-order form.
    pub fn companion(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut c = DMatrix::zeros(2 * n, 2 * n);
        c.view_mut((0, 0), (n, n)).copy_from(&self.a1);
        c.view_mut((0, n), (n, n)).copy_from(&self.a2);
        c.view_mut((n, 0), (n, n)).fill_with_identity();
        c
    }

    pub fn spectral_radius(&self) -> f64 {
        self.companion()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Unconditional mean `(I − A1 − A2)⁻¹ ν`, if it exists.
    pub fn unconditional_mean(&self) -> Option<DVector<f64>> {
        let n = self.dim();
        let m = DMatrix::identity(n, n) - &self.a1 - &self.a2;
        m.lu().solve(&self.nu)
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest sample size accepted by [`estimate_var2`] for `n` series.
pub fn min_observations(n: usize) -> usize {
    2 * n + 2 + 10
}

/// Multivariate OLS of `η(t)` on `(1, η(t−1), η(t−2))`.
///
/// `returns` holds one observation per row. The innovation covariance uses the
/// degrees-of-freedom corrected denominator `T − 2 − (2n + 1)`.
pub fn estimate_var2(returns: &DMatrix<f64>) -> Result<Var2Model> {
    let (t, n) = returns.shape();
    if n == 0 {
        return Err(Error::InvalidParameter("no return series".into()));
    }
    let needed = min_observations(n);
    if t < needed {
        return Err(Error::InsufficientData { needed, got: t });
    }
    ensure_finite("returns", returns.iter())?;

    let rows = t - 2;
    let k = 2 * n + 1;
    let mut x = DMatrix::zeros(rows, k);
    let mut y = DMatrix::zeros(rows, n);
    for r in 0..rows {
        let s = r + 2;
        x[(r, 0)] = 1.0;
        for j in 0..n {
            x[(r, 1 + j)] = returns[(s - 1, j)];
            x[(r, 1 + n + j)] = returns[(s - 2, j)];
            y[(r, j)] = returns[(s, j)];
        }
    }

    let dependent = dependent_columns(&x);
    if !dependent.is_empty() {
        let mut assets: Vec<usize> = dependent
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| (c - 1) % n)
            .collect();
        assets.sort_unstable();
        assets.dedup();
        return Err(Error::RankDeficient { assets });
    }

    let qr = x.clone().qr();
    let qt_y = qr.q().transpose() * &y;
    let coef = qr
        .r()
        .solve_upper_triangular(&qt_y)
        .ok_or(Error::RankDeficient { assets: Vec::new() })?;

    let residuals = &y - &x * &coef;
    let dof = rows - k;
    let sigma = symmetrize(&(residuals.transpose() * &residuals)) / dof as f64;

    let nu = coef.row(0).transpose();
    let a1 = coef.rows(1, n).transpose();
    let a2 = coef.rows(1 + n, n).transpose();
    Ok(Var2Model {
        nu,
        a1,
        a2,
        sigma,
        n_obs: rows,
    })
}

/// Columns whose residual after Gram–Schmidt against all earlier columns is negligible.
fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(x.ncols());
    let mut dependent = Vec::new();
    for c in 0..x.ncols() {
        let col = x.column(c).into_owned();
        let norm = col.norm();
        let mut v = col;
        // Two passes keep the projection accurate for nearly dependent columns.
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let rem = v.norm();
        if norm == 0.0 || rem <= RANK_TOL * norm {
            dependent.push(c);
        } else {
            basis.push(v / rem);
        }
    }
    dependent
}

/// `(I − A1 − A2) η̂` with `η̂` the column means of the recent window.
pub fn trend_adjusted_intercept(model: &Var2Model, recent: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = model.dim();
    ensure_len("trend window columns", n, recent.ncols())?;
    if recent.nrows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mean = recent.row_mean().transpose();
    let factor = DMatrix::identity(n, n) - &model.a1 - &model.a2;
    Ok(factor * mean)
}

/// h-step predictors `ν + A1 Ê(h−1) + A2 Ê(h−2)` for `h = 1..=horizon`, seeded by the
/// two most recent observations.
///
/// With `clamp = Some(c)` every predicted component is limited to `[-c, c]` before
/// it feeds the next step.
pub fn predict_means(
    model: &Var2Model,
    intercept: &DVector<f64>,
    eta_k: &DVector<f64>,
    eta_km1: &DVector<f64>,
    horizon: usize,
    clamp: Option<f64>,
) -> Result<Vec<DVector<f64>>> {
    let n = model.dim();
    ensure_len("intercept", n, intercept.len())?;
    ensure_len("eta(k)", n, eta_k.len())?;
    ensure_len("eta(k-1)", n, eta_km1.len())?;
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let mut prev2 = eta_km1.clone();
    let mut prev1 = eta_k.clone();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut next = intercept + &model.a1 * &prev1 + &model.a2 * &prev2;
        if let Some(c) = clamp {
            next.apply(|x| *x = x.clamp(-c, c));
        }
        out.push(next.clone());
        prev2 = std::mem::replace(&mut prev1, next);
    }
    Ok(out)
}

/// Moving-average weights `Φ_0 = I`, `Φ_1 = A1`, `Φ_s = A1 Φ_{s−1} + A2 Φ_{s−2}`.
pub fn ma_coefficients(model: &Var2Model, horizon: usize) -> Vec<DMatrix<f64>> {
    let n = model.dim();
    let mut phi: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    for s in 0..horizon {
        let next = match s {
            0 => DMatrix::identity(n, n),
            1 => model.a1.clone(),
            _ => &model.a1 * &phi[s - 1] + &model.a2 * &phi[s - 2],
        };
        phi.push(next);
    }
    phi
}
