//! Direct construction of the tracking QP from the stacked wealth map
//! `X = Ψ V(k) + Φ U`, without the block recursions.
//!
//! Used to cross-check [`assemble_qp`](super::assemble_qp): the expectations of
//! `Φ` and `ΦᵀΦ` are expanded term by term, the excess-return moments come from an
//! affine map of the augmented moments of `(η, 1)`, and R̄ is formed as `Dᵀ diag(R) D`
//! with `D` the block difference operator.

use nalgebra::{DMatrix, DVector};

use super::builder::{first_block_constraints, QpBuildContext};
use super::QpProblem;
use crate::error::{ensure_len, Result};
use crate::forecast::MomentForecast;
use crate::model::{ConstraintSpec, PortfolioState};

/// Maps `(η, 1)` to the excess-return vector `b` (as a column).
fn excess_map(n: usize, r1: f64, r2: f64) -> DMatrix<f64> {
    let mut map = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        map[(i, i)] = 1.0;
        map[(i, n)] = -r1;
    }
    map[(n, n)] = r1 - r2;
    map
}

/// `E{(η_t, 1)(η_f, 1)ᵀ}`.
fn augmented_moment(forecast: &MomentForecast, t: usize, f: usize) -> DMatrix<f64> {
    let n = forecast.dim();
    let mut out = DMatrix::zeros(n + 1, n + 1);
    out.view_mut((0, 0), (n, n)).copy_from(forecast.second_moment(t, f));
    out.view_mut((0, n), (n, 1)).copy_from(forecast.mean(t));
    out.view_mut((n, 0), (1, n)).copy_from(&forecast.mean(f).transpose());
    out[(n, n)] = 1.0;
    out
}

/// `Ψ = (A, A², …, A^m)ᵀ`.
pub fn psi(ctx: &QpBuildContext) -> DVector<f64> {
    DVector::from_fn(ctx.horizon, |i, _| ctx.growth.powi(i as i32 + 1))
}

/// `E{Φ}`: row `i`, block `j <= i` is `A^{i−j} b̄(k+j)`.
pub fn expected_phi(ctx: &QpBuildContext, forecast: &MomentForecast) -> DMatrix<f64> {
    let m = ctx.horizon;
    let n = forecast.dim();
    let b = n + 1;
    let map = excess_map(n, ctx.lending_rate, ctx.borrowing_rate);
    let mut phi = DMatrix::zeros(m, b * m);
    for j in 1..=m {
        let mut aug = DVector::from_element(b, 1.0);
        aug.rows_mut(0, n).copy_from(forecast.mean(j));
        let bj = &map * aug;
        for i in j..=m {
            let w = ctx.growth.powi((i - j) as i32);
            phi.view_mut((i - 1, (j - 1) * b), (1, b))
                .copy_from(&(bj.transpose() * w));
        }
    }
    phi
}

/// `E{ΦᵀΦ}` summed row by row over the horizon.
pub fn expected_phi_gram(ctx: &QpBuildContext, forecast: &MomentForecast) -> DMatrix<f64> {
    let m = ctx.horizon;
    let n = forecast.dim();
    let b = n + 1;
    let map = excess_map(n, ctx.lending_rate, ctx.borrowing_rate);
    let mut gram = DMatrix::zeros(b * m, b * m);
    for i in 1..=m {
        for t in 1..=i {
            for f in 1..=i {
                let w = ctx.growth.powi((i - t) as i32) * ctx.growth.powi((i - f) as i32);
                let block = &map * augmented_moment(forecast, t, f) * map.transpose() * w;
                let mut target = gram.view_mut(((t - 1) * b, (f - 1) * b), (b, b));
                target += block;
            }
        }
    }
    gram
}

/// `Dᵀ diag(R(k,0), …, R(k,m−1)) D` with `(D U)_i = u_i − u_{i−1}` (and `u_{−1}` dropped).
pub fn rbar_from_differences(ctx: &QpBuildContext) -> DMatrix<f64> {
    let m = ctx.horizon;
    let b = ctx.cost[0].nrows();
    let mut d = DMatrix::<f64>::zeros(b * m, b * m);
    let mut w = DMatrix::zeros(b * m, b * m);
    for i in 0..m {
        d.view_mut((i * b, i * b), (b, b)).fill_with_identity();
        if i > 0 {
            let mut sub = d.view_mut((i * b, (i - 1) * b), (b, b));
            sub.fill_with_identity();
            sub.neg_mut();
        }
        w.view_mut((i * b, i * b), (b, b)).copy_from(&ctx.cost[i]);
    }
    d.transpose() * w * d
}

/// Stacked-matrix assembly: `P = 2 (E{ΦᵀΦ} + R̄)`,
/// `q = 2 V Ψᵀ E{Φ} − Δ1 E{Φ} − L` with `L = (2 R(k,0) u(k−1), 0, …)`.
pub fn build_qp_oracle(
    state: &PortfolioState,
    ctx: &QpBuildContext,
    forecast: &MomentForecast,
    spec: &ConstraintSpec,
) -> Result<QpProblem> {
    let n = spec.n();
    ctx.validate(n)?;
    ensure_len("forecast horizon", ctx.horizon, forecast.horizon())?;
    ensure_len("forecast dimension", n, forecast.dim())?;
    let (c, lower, upper) = first_block_constraints(state, spec, ctx.horizon)?;
    let m = ctx.horizon;

    let e_phi = expected_phi(ctx, forecast);
    let gram = expected_phi_gram(ctx, forecast);
    let rbar = rbar_from_differences(ctx);
    let delta1 = DVector::from_fn(m, |i, _| ctx.r1(i + 1));

    let mut l = DVector::zeros((n + 1) * m);
    l.rows_mut(0, n + 1)
        .copy_from(&(&ctx.cost[0] * &state.prev_control * 2.0));

    let p = (gram + rbar) * 2.0;
    let linear = e_phi.transpose() * (psi(ctx) * (2.0 * state.wealth) - delta1);
    let q = linear - l;
    Ok(QpProblem {
        p,
        q,
        c,
        lower,
        upper,
    })
}
