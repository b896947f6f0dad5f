mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::*;
use trackmpc::forecast::{estimate_var2, predict_means, predict_second_moments};
use trackmpc::model::{
    benchmark_step, constraint_bounds, constraint_matrix, wealth_step, wealth_step_gross,
};
use trackmpc::solver::{kkt_residuals, solve_warm};
use trackmpc::{
    assemble_qp, solve, ConstraintSpec, MarketParams, PortfolioState, QpBuildContext,
    SolverSettings, TradeDecision,
};

fn market(n: usize) -> impl Strategy<Value = MarketParams> {
    (0.0..0.01f64, 1e-6..0.01f64, 0.0..0.01f64)
        .prop_map(move |(r1, gap, mu0)| MarketParams::new(n, r1, r1 + gap, mu0).unwrap())
}

fn vector(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(lo..hi, n).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn wealth_update_forms_agree(
        (mkt, u, eta) in (1usize..6).prop_flat_map(|n| (market(n), vector(n + 1, -5.0, 5.0), vector(n, -0.5, 0.5))),
        v in 0.01..100.0f64,
    ) {
        let a = wealth_step(v, &u, &eta, &mkt).unwrap();
        let b = wealth_step_gross(v, &u, &eta, &mkt).unwrap();
        let scale = a.abs().max(b.abs()).max(v);
        prop_assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
    }

    #[test]
    fn trade_decision_is_self_financing(
        (u, prev) in (1usize..6).prop_flat_map(|n| (vector(n + 1, -3.0, 3.0), vector(n + 1, -3.0, 3.0))),
        v in 0.01..10.0f64,
    ) {
        let n = u.len() - 1;
        let r = DMatrix::identity(n + 1, n + 1) * 1e-4;
        let d = TradeDecision::new(u.clone(), v, &prev, &r).unwrap();
        let rebuilt = u.rows(0, n).sum() + d.risk_free - u[n];
        prop_assert!((rebuilt - v).abs() <= 1e-9 * v.max(1.0));
        prop_assert!(d.cost >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn bounds_match_elementwise_limits(
        u in (1usize..6).prop_flat_map(|n| vector(n + 1, -4.0, 4.0)),
        v in 0.1..10.0f64,
        beta in -1.0..0.0f64,
        gamma in 0.5..4.0f64,
        gamma0 in 1.0..4.0f64,
    ) {
        let n = u.len() - 1;
        let spec = ConstraintSpec::uniform(n, beta, gamma, gamma0).unwrap();
        let state = PortfolioState::initial(n, v);
        let (lo, hi) = constraint_bounds(&state, &spec).unwrap();
        let su = constraint_matrix(n) * &u;
        let via_s = (0..n + 2).all(|i| lo[i] <= su[i] && su[i] <= hi[i]);
        let u0 = v - u.rows(0, n).sum() + u[n];
        let direct = (0..n).all(|i| beta * v <= u[i] && u[i] <= gamma * v)
            && 0.0 <= u0 && u0 <= gamma0 * v
            && 0.0 <= u[n] && u[n] <= gamma * v;
        // the two descriptions can differ only on a rounding knife-edge
        let edge = (0..n + 2).map(|i| (su[i] - lo[i]).abs().min((su[i] - hi[i]).abs())).fold(f64::MAX, f64::min);
        prop_assert!(via_s == direct || edge < 1e-12);
    }

    #[test]
    fn benchmark_grows(v0 in 0.01..100.0f64, mu0 in 1e-6..0.01f64) {
        let next = benchmark_step(v0, mu0).unwrap();
        prop_assert!(next > v0);
    }

    #[test]
    fn qp_hessian_is_positive_definite(seed in any::<u64>(), n in 1usize..6, m in 1usize..11, stochastic in any::<bool>()) {
        let mut rng = rng(seed);
        let inst = random_instance(&mut rng, n, m, stochastic);
        let qp = assemble_qp(&inst.state, &inst.ctx, &inst.forecast, &inst.spec).unwrap();
        prop_assert_eq!(&qp.p, &qp.p.transpose());
        prop_assert!(qp.p.clone().cholesky().is_some());
        prop_assert_eq!(qp.c.nrows(), n + 2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn optimum_scales_with_wealth(seed in any::<u64>(), n in 1usize..4, m in 1usize..6, lambda in 0.1..10.0f64) {
        let mut rng = rng(seed);
        let inst = random_instance(&mut rng, n, m, true);
        let settings = SolverSettings::default();
        let base = solve(&assemble_qp(&inst.state, &inst.ctx, &inst.forecast, &inst.spec).unwrap(), &settings).unwrap();

        let mut state = inst.state.clone();
        state.wealth *= lambda;
        state.benchmark *= lambda;
        state.prev_control *= lambda;
        let rho: Vec<f64> = inst.ctx.rho.iter().map(|r| r * lambda).collect();
        let ctx = QpBuildContext::new(&inst.market, m, state.benchmark, rho, inst.ctx.cost.clone()).unwrap();
        let scaled = solve(&assemble_qp(&state, &ctx, &inst.forecast, &inst.spec).unwrap(), &settings).unwrap();
        prop_assert!(base.is_optimal() && scaled.is_optimal());
        let expect = &base.u_star * lambda;
        let err = (&scaled.u_star - &expect).amax() / expect.amax().max(1e-12);
        prop_assert!(err <= 1e-8, "relative gap {err:e}");
    }

    #[test]
    fn solutions_do_not_depend_on_warm_start(seed in any::<u64>(), dim in 1usize..40, rows in 0usize..8) {
        let mut rng = rng(seed);
        let qp = random_qp(&mut rng, dim, rows.min(dim));
        let settings = SolverSettings::default();
        let cold = solve(&qp, &settings).unwrap();
        let warm = solve_warm(&qp, &settings, &(normal_vector(&mut rng, dim) * 3.0)).unwrap();
        prop_assert!(cold.is_optimal() && warm.is_optimal());
        prop_assert!((&cold.u_star - &warm.u_star).amax() <= 1e-7);
        prop_assert!(kkt_residuals(&qp, &warm.u_star, &warm.multipliers).within(settings.tol));
        for s in [&cold, &warm] {
            prop_assert!(s.trace.windows(2).all(|w| w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs())));
        }
    }

    #[test]
    fn second_moments_symmetric_and_psd(seed in any::<u64>(), n in 1usize..4, m in 1usize..8) {
        let mut rng = rng(seed);
        let model = random_stable_var(&mut rng, n, 0.95);
        let means = predict_means(&model, &model.nu, &normal_vector(&mut rng, n), &normal_vector(&mut rng, n), m, None).unwrap();
        let f = predict_second_moments(&model, means).unwrap();
        for i in 1..=m {
            for j in 1..=m {
                prop_assert_eq!(f.second_moment(i, j), &f.second_moment(j, i).transpose());
            }
            let cov = f.covariance(i, i);
            prop_assert!(cov.symmetric_eigen().eigenvalues.min() >= -1e-10);
        }
    }

    #[test]
    fn ols_residuals_orthogonal_to_regressors(seed in any::<u64>(), n in 1usize..4, t in 60usize..300) {
        let mut rng = rng(seed);
        let data = normal_matrix(&mut rng, t, n) * 0.01;
        let fit = estimate_var2(&data).unwrap();
        let rows = t - 2;
        let mut x = DMatrix::zeros(rows, 2 * n + 1);
        let mut res = DMatrix::zeros(rows, n);
        for r in 0..rows {
            x[(r, 0)] = 1.0;
            for j in 0..n {
                x[(r, 1 + j)] = data[(r + 1, j)];
                x[(r, 1 + n + j)] = data[(r, j)];
            }
            let prev1 = data.row(r + 1).transpose();
            let prev2 = data.row(r).transpose();
            let pred = &fit.nu + &fit.a1 * prev1 + &fit.a2 * prev2;
            res.row_mut(r).copy_from(&(data.row(r + 2) - pred.transpose()));
        }
        let cross = x.transpose() * &res;
        prop_assert!(cross.amax() <= 1e-8 * x.norm() * res.norm());
    }
}
