//! Block-recursive assembly of the tracking QP.
//!
//! The stacked decision vector is `U = (u(k|k), …, u(k+m−1|k))`, each block `n + 1`
//! long. The criterion is `Y(U) = (2 V G − F) U + Uᵀ (H + R̄) U`, handed to the
//! solver as `½ Uᵀ P U + qᵀ U` with `P = 2 (H + R̄)` and `q = 2 V G − F`.

use nalgebra::{DMatrix, DVector};

use super::QpProblem;
use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::forecast::MomentForecast;
use crate::model::{constraint_bounds, constraint_matrix, ConstraintSpec, MarketParams, PortfolioState};

/// Horizon data shared by one QP assembly.
#[derive(Debug, Clone)]
pub struct QpBuildContext {
    pub horizon: usize,
    /// Gross risk-free growth `A = 1 + r1`.
    pub growth: f64,
    pub lending_rate: f64,
    pub borrowing_rate: f64,
    /// Tracking weights `ρ(k, t)`, `t = 1..=m`.
    pub rho: Vec<f64>,
    /// Transaction-cost matrices `R(k, i)` for `i = 0..m`. Entry `m` is read only by
    /// the literal R̄ variant and may be omitted otherwise.
    pub cost: Vec<DMatrix<f64>>,
    /// Benchmark values `V0(k + t)`, `t = 1..=m`.
    pub benchmark_path: Vec<f64>,
    /// Build R̄ with a terminal block, ending in `R(k,m−1) + R(k,m)` and `−R(k,m)`,
    /// instead of the Hessian of the horizon cost sum.
    pub rbar_with_terminal_cost: bool,
    /// Put `−2 R(k,0) u(k−1)` into every block of F instead of `+2 R(k,0) u(k−1)`
    /// in the first block only.
    pub prev_control_in_every_block: bool,
}

impl QpBuildContext {
    /// Constant `ρ` and `R` over the horizon, benchmark grown from its current value.
    pub fn constant(
        market: &MarketParams,
        horizon: usize,
        benchmark_now: f64,
        rho: f64,
        cost: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(
            market,
            horizon,
            benchmark_now,
            vec![rho; horizon],
            vec![cost; horizon + 1],
        )
    }

    pub fn new(
        market: &MarketParams,
        horizon: usize,
        benchmark_now: f64,
        rho: Vec<f64>,
        cost: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let mut path = Vec::with_capacity(horizon);
        let mut v0 = benchmark_now;
        for _ in 0..horizon {
            v0 *= 1.0 + market.benchmark_rate;
            path.push(v0);
        }
        let ctx = Self {
            horizon,
            growth: market.growth(),
            lending_rate: market.lending_rate,
            borrowing_rate: market.borrowing_rate,
            rho,
            cost,
            benchmark_path: path,
            rbar_with_terminal_cost: false,
            prev_control_in_every_block: false,
        };
        ctx.validate(market.n)?;
        Ok(ctx)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let m = self.horizon;
        if m == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        ensure_len("rho schedule", m, self.rho.len())?;
        ensure_len("benchmark path", m, self.benchmark_path.len())?;
        if self.cost.len() < m {
            return Err(Error::DimensionMismatch {
                what: "cost schedule",
                expected: m,
                found: self.cost.len(),
            });
        }
        ensure_finite("rho schedule", self.rho.iter())?;
        ensure_finite("benchmark path", self.benchmark_path.iter())?;
        if let Some(t) = (1..=m).find(|&t| !(self.r1(t) > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "R1(k,{t}) = {} must be positive",
                self.r1(t)
            )));
        }
        for r in &self.cost {
            ensure_len("cost matrix", n + 1, r.nrows())?;
            ensure_len("cost matrix", n + 1, r.ncols())?;
            ensure_finite("cost matrix", r.iter())?;
            if (r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) {
                return Err(Error::InvalidParameter("cost matrix must be symmetric".into()));
            }
            if r.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite("transaction-cost matrix"));
            }
        }
        Ok(())
    }

    /// `R1(k, t) = 2 V0(k + t) + ρ(k, t)`, `t` 1-based.
    pub fn r1(&self, t: usize) -> f64 {
        2.0 * self.benchmark_path[t - 1] + self.rho[t - 1]
    }

    fn block(&self) -> usize {
        self.cost[0].nrows()
    }
}

/// `Q1(t) = A² Q1(t−1) + 1`, `Q1(0) = 1`, for `t = 0..m`.
pub fn q1_recursion(horizon: usize, growth: f64) -> Vec<f64> {
    let a2 = growth * growth;
    let mut q = Vec::with_capacity(horizon);
    let mut acc = 1.0;
    for t in 0..horizon {
        if t > 0 {
            acc = a2 * acc + 1.0;
        }
        q.push(acc);
    }
    q
}

/// `Q2(t) = A Q2(t−1) + R1(k, m−t)`, `Q2(0) = R1(k, m)`, for `t = 0..m`.
///
/// `r1[t − 1]` holds `R1(k, t)`.
pub fn q2_recursion(horizon: usize, growth: f64, r1: &[f64]) -> Result<Vec<f64>> {
    ensure_len("R1 schedule", horizon, r1.len())?;
    let mut q = Vec::with_capacity(horizon);
    let mut acc = 0.0;
    for t in 0..horizon {
        acc = growth * acc + r1[horizon - t - 1];
        q.push(acc);
    }
    Ok(q)
}

/// Expected excess-return row `b̄ = (η̄_1 − r1, …, η̄_n − r1, r1 − r2)`.
pub fn expected_b(mean: &DVector<f64>, lending_rate: f64, borrowing_rate: f64) -> DVector<f64> {
    let n = mean.len();
    DVector::from_fn(n + 1, |i, _| {
        if i < n {
            mean[i] - lending_rate
        } else {
            lending_rate - borrowing_rate
        }
    })
}

/// `E{b(k+t)ᵀ b(k+f) | F_k}` as an `(n+1) × (n+1)` matrix.
pub fn expected_outer_b(
    forecast: &MomentForecast,
    t: usize,
    f: usize,
    lending_rate: f64,
    borrowing_rate: f64,
) -> Result<DMatrix<f64>> {
    let m = forecast.horizon();
    if t == 0 || f == 0 || t > m || f > m {
        return Err(Error::HorizonIndex { t, f, horizon: m });
    }
    let n = forecast.dim();
    let r1 = lending_rate;
    let gap = r1 - borrowing_rate;
    let mt = forecast.mean(t);
    let mf = forecast.mean(f);
    let theta = forecast.second_moment(t, f);
    let mut out = DMatrix::zeros(n + 1, n + 1);
    for a in 0..n {
        for c in 0..n {
            out[(a, c)] = theta[(a, c)] - r1 * (mt[a] + mf[c]) + r1 * r1;
        }
        out[(a, n)] = (mt[a] - r1) * gap;
        out[(n, a)] = gap * (mf[a] - r1);
    }
    out[(n, n)] = gap * gap;
    Ok(out)
}

fn check_forecast(ctx: &QpBuildContext, forecast: &MomentForecast) -> Result<()> {
    ensure_len("forecast horizon", ctx.horizon, forecast.horizon())?;
    ensure_len("forecast dimension", ctx.block() - 1, forecast.dim())?;
    Ok(())
}

/// Quadratic weight `H`: block `(t, f)` is `A^{f−t} Q1(m−f) E{b_tᵀ b_f}` for `t <= f`,
/// mirrored below the diagonal.
pub fn build_h(ctx: &QpBuildContext, forecast: &MomentForecast) -> Result<DMatrix<f64>> {
    check_forecast(ctx, forecast)?;
    let m = ctx.horizon;
    let b = ctx.block();
    let q1 = q1_recursion(m, ctx.growth);
    let mut h = DMatrix::zeros(b * m, b * m);
    for t in 1..=m {
        for f in t..=m {
            let scale = ctx.growth.powi((f - t) as i32) * q1[m - f];
            let block = expected_outer_b(forecast, t, f, ctx.lending_rate, ctx.borrowing_rate)? * scale;
            if t == f {
                let sym = (&block + block.transpose()) * 0.5;
                h.view_mut(((t - 1) * b, (t - 1) * b), (b, b)).copy_from(&sym);
            } else {
                h.view_mut(((f - 1) * b, (t - 1) * b), (b, b))
                    .copy_from(&block.transpose());
                h.view_mut(((t - 1) * b, (f - 1) * b), (b, b)).copy_from(&block);
            }
        }
    }
    Ok(h)
}

/// `G_t = A^t Q1(m−t) b̄(k+t)`.
pub fn build_g(ctx: &QpBuildContext, forecast: &MomentForecast) -> Result<DVector<f64>> {
    check_forecast(ctx, forecast)?;
    let m = ctx.horizon;
    let b = ctx.block();
    let q1 = q1_recursion(m, ctx.growth);
    let mut g = DVector::zeros(b * m);
    for t in 1..=m {
        let bt = expected_b(forecast.mean(t), ctx.lending_rate, ctx.borrowing_rate);
        let scale = ctx.growth.powi(t as i32) * q1[m - t];
        g.rows_mut((t - 1) * b, b).copy_from(&(bt * scale));
    }
    Ok(g)
}

/// `F_t = Q2(m−t) b̄(k+t)`, plus `2 R(k,0) u(k−1)` on the first block.
///
/// The previous-control term comes from expanding the `i = 0` trade cost, which only
/// touches `u(k|k)`. See [`QpBuildContext::prev_control_in_every_block`] for the other reading.
pub fn build_f(
    ctx: &QpBuildContext,
    forecast: &MomentForecast,
    prev_control: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_forecast(ctx, forecast)?;
    let m = ctx.horizon;
    let b = ctx.block();
    ensure_len("previous control", b, prev_control.len())?;
    let r1: Vec<f64> = (1..=m).map(|t| ctx.r1(t)).collect();
    let q2 = q2_recursion(m, ctx.growth, &r1)?;
    let carry = &ctx.cost[0] * prev_control * 2.0;
    let mut f = DVector::zeros(b * m);
    for t in 1..=m {
        let bt = expected_b(forecast.mean(t), ctx.lending_rate, ctx.borrowing_rate);
        let mut block = bt * q2[m - t];
        if ctx.prev_control_in_every_block {
            block -= &carry;
        } else if t == 1 {
            block += &carry;
        }
        f.rows_mut((t - 1) * b, b).copy_from(&block);
    }
    Ok(f)
}

/// Quadratic-form matrix of the horizon trade cost `Σ_{i<m} Δu_iᵀ R(k,i) Δu_i`:
/// block-tridiagonal with diagonal `R(k,i) + R(k,i+1)` (`R(k,m−1)` on the last block)
/// and off-diagonal `−R(k,i+1)`.
pub fn build_rbar(ctx: &QpBuildContext) -> Result<DMatrix<f64>> {
    let m = ctx.horizon;
    let b = ctx.block();
    if ctx.rbar_with_terminal_cost && ctx.cost.len() < m + 1 {
        return Err(Error::DimensionMismatch {
            what: "cost schedule (literal R-bar needs R(k,m))",
            expected: m + 1,
            found: ctx.cost.len(),
        });
    }
    let mut rbar = DMatrix::zeros(b * m, b * m);
    for i in 0..m {
        let mut diag = ctx.cost[i].clone();
        if i + 1 < m || ctx.rbar_with_terminal_cost {
            diag += &ctx.cost[i + 1];
        }
        rbar.view_mut((i * b, i * b), (b, b)).copy_from(&diag);
        if i + 1 < m {
            let off = -&ctx.cost[i + 1];
            rbar.view_mut((i * b, (i + 1) * b), (b, b)).copy_from(&off);
            rbar.view_mut(((i + 1) * b, i * b), (b, b)).copy_from(&off);
        }
    }
    Ok(rbar)
}

/// Stacks `S` over the first horizon block; later blocks carry no constraints.
pub(crate) fn first_block_constraints(
    state: &PortfolioState,
    spec: &ConstraintSpec,
    horizon: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let n = spec.n();
    ensure_len("previous control", n + 1, state.prev_control.len())?;
    let (lower, upper) = constraint_bounds(state, spec)?;
    if let Some(row) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
        return Err(Error::InfeasibleBounds {
            row,
            lower: lower[row],
            upper: upper[row],
        });
    }
    let mut c = DMatrix::zeros(n + 2, (n + 1) * horizon);
    c.view_mut((0, 0), (n + 2, n + 1)).copy_from(&constraint_matrix(n));
    Ok((c, lower, upper))
}

pub fn assemble_qp(
    state: &PortfolioState,
    ctx: &QpBuildContext,
    forecast: &MomentForecast,
    spec: &ConstraintSpec,
) -> Result<QpProblem> {
    let n = spec.n();
    ctx.validate(n)?;
    let (c, lower, upper) = first_block_constraints(state, spec, ctx.horizon)?;
    let h = build_h(ctx, forecast)?;
    let rbar = build_rbar(ctx)?;
    let g = build_g(ctx, forecast)?;
    let f = build_f(ctx, forecast, &state.prev_control)?;
    let mut p = (h + rbar) * 2.0;
    p = (&p + p.transpose()) * 0.5;
    let q = g * (2.0 * state.wealth) - f;
    Ok(QpProblem {
        p,
        q,
        c,
        lower,
        upper,
    })
}

/// First `n + 1` entries of the stacked solution: the control applied now.
pub fn extract_control(solution: &DVector<f64>, n: usize, horizon: usize) -> Result<DVector<f64>> {
    ensure_len("stacked controls", (n + 1) * horizon, solution.len())?;
    Ok(solution.rows(0, n + 1).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market(n: usize) -> MarketParams {
        MarketParams::new(n, 0.0001, 0.0002, 0.0015).unwrap()
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn q1_values() {
        assert_eq!(q1_recursion(5, 1.0), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let a: f64 = 1.0001;
        let q = q1_recursion(3, a);
        assert!((q[2] - (1.0 + a.powi(2) + a.powi(4))).abs() < 1e-15);
        assert!((q[2] - 3.000_600_070_004).abs() < 1e-12);
        assert_eq!(q1_recursion(1, 7.5)[0], 1.0);
    }

    #[test]
    fn q2_values() {
        let r1 = [3.0, 5.0, 7.0];
        assert_eq!(q2_recursion(3, 0.0, &r1).unwrap(), vec![7.0, 5.0, 3.0]);
        assert_eq!(q2_recursion(4, 1.0, &[2.5; 4]).unwrap(), vec![2.5, 5.0, 7.5, 10.0]);
        assert_eq!(q2_recursion(1, 1.3, &[4.0]).unwrap(), vec![4.0]);
        assert!(q2_recursion(2, 1.0, &[1.0]).is_err());
    }

    #[test]
    fn expected_b_values() {
        let b = expected_b(&dv(&[0.0003, 0.0003]), 0.0003, 0.0003);
        assert!(b.iter().all(|&x| x == 0.0));
        let b = expected_b(&dv(&[0.0015]), 0.0001, 0.0002);
        assert!((b[0] - 0.0014).abs() < 1e-18);
        assert!((b[1] + 0.0001).abs() < 1e-18);
    }

    #[test]
    fn outer_b_deterministic_is_product() {
        let means = vec![dv(&[0.01, -0.02]), dv(&[0.003, 0.004])];
        let f = MomentForecast::deterministic(means.clone()).unwrap();
        let got = expected_outer_b(&f, 1, 2, 0.0001, 0.0002).unwrap();
        let b1 = expected_b(&means[0], 0.0001, 0.0002);
        let b2 = expected_b(&means[1], 0.0001, 0.0002);
        assert!((got - &b1 * b2.transpose()).amax() < 1e-18);
    }

    #[test]
    fn outer_b_scalar_variance() {
        let v = 4e-4;
        let f = MomentForecast::from_joint(vec![dv(&[0.0])], &DMatrix::from_element(1, 1, v)).unwrap();
        let got = expected_outer_b(&f, 1, 1, 0.0, 0.0001).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[v, 0.0, 0.0, 1e-8]);
        assert!((got - want).amax() < 1e-20);
    }

    #[test]
    fn outer_b_rejects_bad_index() {
        let f = MomentForecast::deterministic(vec![dv(&[0.0]); 2]).unwrap();
        assert!(matches!(
            expected_outer_b(&f, 0, 1, 0.0, 0.1),
            Err(Error::HorizonIndex { .. })
        ));
        assert!(expected_outer_b(&f, 1, 3, 0.0, 0.1).is_err());
    }

    #[test]
    fn single_block_h_is_outer_b() {
        let f = MomentForecast::from_joint(
            vec![dv(&[0.002, 0.001])],
            &DMatrix::from_row_slice(2, 2, &[1e-4, 2e-5, 2e-5, 3e-4]),
        )
        .unwrap();
        let ctx = QpBuildContext::constant(&market(2), 1, 1.0, 0.1, DMatrix::identity(3, 3) * 1e-4).unwrap();
        let h = build_h(&ctx, &f).unwrap();
        let outer = expected_outer_b(&f, 1, 1, 0.0001, 0.0002).unwrap();
        assert!((h - outer).amax() < 1e-18);
    }

    #[test]
    fn g_single_block_unit_growth() {
        let mut ctx =
            QpBuildContext::constant(&market(1), 1, 1.0, 0.1, DMatrix::identity(2, 2)).unwrap();
        ctx.growth = 1.0;
        let f = MomentForecast::deterministic(vec![dv(&[0.01])]).unwrap();
        let g = build_g(&ctx, &f).unwrap();
        assert_eq!(g, expected_b(&dv(&[0.01]), 0.0001, 0.0002));
    }

    #[test]
    fn g_vanishes_without_excess_return() {
        let mkt = MarketParams::new(2, 0.0001, 0.00010000001, 0.0).unwrap();
        let ctx = QpBuildContext::constant(&mkt, 3, 1.0, 0.1, DMatrix::identity(3, 3)).unwrap();
        let f = MomentForecast::deterministic(vec![dv(&[0.0001, 0.0001]); 3]).unwrap();
        assert!(build_g(&ctx, &f).unwrap().amax() < 1e-10);
    }

    #[test]
    fn f_without_previous_position() {
        let ctx = QpBuildContext::constant(&market(2), 3, 1.0, 0.1, DMatrix::identity(3, 3) * 1e-4).unwrap();
        let means = vec![dv(&[0.001, 0.002]), dv(&[0.0, 0.003]), dv(&[-0.001, 0.0])];
        let fc = MomentForecast::deterministic(means.clone()).unwrap();
        let f = build_f(&ctx, &fc, &DVector::zeros(3)).unwrap();
        let r1: Vec<f64> = (1..=3).map(|t| ctx.r1(t)).collect();
        let q2 = q2_recursion(3, ctx.growth, &r1).unwrap();
        for t in 1..=3 {
            let want = expected_b(&means[t - 1], 0.0001, 0.0002) * q2[3 - t];
            assert_eq!(f.rows((t - 1) * 3, 3).into_owned(), want);
        }
    }

    #[test]
    fn rbar_small_cases() {
        let r = 0.5;
        let ctx = QpBuildContext::constant(&market(1), 1, 1.0, 0.1, DMatrix::identity(2, 2) * r).unwrap();
        assert_eq!(build_rbar(&ctx).unwrap(), DMatrix::identity(2, 2) * r);

        let ctx = QpBuildContext::constant(&market(1), 2, 1.0, 0.1, DMatrix::identity(2, 2) * r).unwrap();
        let want = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0 * r, 0.0, -r, 0.0, //
                0.0, 2.0 * r, 0.0, -r, //
                -r, 0.0, r, 0.0, //
                0.0, -r, 0.0, r,
            ],
        );
        assert_eq!(build_rbar(&ctx).unwrap(), want);
    }

    #[test]
    fn literal_rbar_adds_terminal_cost() {
        let mut ctx =
            QpBuildContext::constant(&market(1), 2, 1.0, 0.1, DMatrix::identity(2, 2) * 0.5).unwrap();
        let exact = build_rbar(&ctx).unwrap();
        ctx.rbar_with_terminal_cost = true;
        let literal = build_rbar(&ctx).unwrap();
        let gap = literal - exact;
        assert_eq!(gap.view((2, 2), (2, 2)).into_owned(), DMatrix::identity(2, 2) * 0.5);
        assert_eq!(gap.view((0, 0), (2, 4)).amax(), 0.0);
        ctx.cost.truncate(2);
        assert!(build_rbar(&ctx).is_err());
    }

    #[test]
    fn context_validation() {
        let mkt = market(1);
        assert!(QpBuildContext::constant(&mkt, 0, 1.0, 0.1, DMatrix::identity(2, 2)).is_err());
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            QpBuildContext::constant(&mkt, 2, 1.0, 0.1, not_pd),
            Err(Error::NotPositiveDefinite(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(QpBuildContext::constant(&mkt, 2, 1.0, 0.1, asym).is_err());
        assert!(QpBuildContext::constant(&mkt, 2, -1.0, 0.1, DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn default_sized_problem_shape() {
        let n = 5;
        let m = 10;
        let mkt = market(n);
        let ctx = QpBuildContext::constant(&mkt, m, 1.0, 0.1, DMatrix::identity(n + 1, n + 1) * 1e-4).unwrap();
        let fc = MomentForecast::deterministic(vec![DVector::from_element(n, 0.001); m]).unwrap();
        let spec = ConstraintSpec::uniform(n, -0.6, 3.0, 3.0).unwrap();
        let qp = assemble_qp(&PortfolioState::initial(n, 1.0), &ctx, &fc, &spec).unwrap();
        assert_eq!(qp.p.shape(), (60, 60));
        assert_eq!(qp.c.shape(), (7, 60));
        assert_eq!(qp.lower.len(), 7);
        assert!(qp.c.columns(6, 54).amax() == 0.0);
    }

    #[test]
    fn zero_excess_forecast_prefers_cash() {
        // b̄ = 0 needs η̄ = r1 and r1 = r2; approximate the rate gap by a tiny spread.
        let mkt = MarketParams::new(2, 0.0001, 0.0001 + 1e-15, 0.0).unwrap();
        let ctx = QpBuildContext::constant(&mkt, 3, 1.0, 0.1, DMatrix::identity(3, 3) * 1e-4).unwrap();
        let fc = MomentForecast::deterministic(vec![dv(&[0.0001, 0.0001]); 3]).unwrap();
        let spec = ConstraintSpec::uniform(2, -0.6, 3.0, 3.0).unwrap();
        let qp = assemble_qp(&PortfolioState::initial(2, 1.0), &ctx, &fc, &spec).unwrap();
        assert!(qp.q.amax() < 1e-12);
        let minimizer = qp.p.clone().cholesky().unwrap().solve(&(-&qp.q));
        assert!(minimizer.amax() < 1e-6);
    }

    #[test]
    fn extract_control_slices_first_block() {
        let u = dv(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(extract_control(&u, 2, 2).unwrap(), dv(&[1.0, 2.0, 3.0]));
        assert_eq!(extract_control(&dv(&[1.0, 2.0]), 1, 1).unwrap(), dv(&[1.0, 2.0]));
        assert!(extract_control(&u, 2, 3).is_err());
    }
}
