//! Shared oracles and instance generators for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use trackmpc::model::wealth_step;
use trackmpc::{
    ConstraintSpec, MarketParams, MomentForecast, PortfolioState, QpBuildContext, QpProblem,
    Var2Model,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// Random symmetric positive definite matrix with eigenvalues roughly in `[floor, floor + scale·dim]`.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize, scale: f64, floor: f64) -> DMatrix<f64> {
    let b = normal_matrix(rng, dim, dim);
    let s = &b * b.transpose() * (scale / dim as f64) + DMatrix::identity(dim, dim) * floor;
    (&s + s.transpose()) * 0.5
}

/// One random QP-assembly instance.
pub struct Instance {
    pub market: MarketParams,
    pub state: PortfolioState,
    pub ctx: QpBuildContext,
    pub forecast: MomentForecast,
    pub spec: ConstraintSpec,
    /// Joint covariance of the stacked horizon returns (zero for deterministic forecasts).
    pub joint_cov: DMatrix<f64>,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.market.n
    }

    pub fn m(&self) -> usize {
        self.ctx.horizon
    }
}

/// Random market, state, cost/weight schedules and forecast. With `stochastic` the
/// forecast carries a random joint covariance across the horizon.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize, stochastic: bool) -> Instance {
    let r1 = rng.random_range(0.0..0.002);
    let r2 = r1 + rng.random_range(1e-5..0.002);
    let mu0 = rng.random_range(0.0..0.003);
    let market = MarketParams::new(n, r1, r2, mu0).unwrap();
    let wealth = rng.random_range(0.5..2.0);
    let mut state = PortfolioState::initial(n, wealth);
    state.benchmark = rng.random_range(0.5..2.0);
    state.prev_control = normal_vector(rng, n + 1) * (0.3 * wealth);
    state.prev_control[n] = state.prev_control[n].abs();

    let rho: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..0.5)).collect();
    let cost: Vec<DMatrix<f64>> = (0..=m)
        .map(|_| {
            let scale = rng.random_range(1e-4..1e-2);
            random_spd(rng, n + 1, scale, 1e-5)
        })
        .collect();
    let ctx = QpBuildContext::new(&market, m, state.benchmark, rho, cost).unwrap();

    let means: Vec<DVector<f64>> = (0..m)
        .map(|_| normal_vector(rng, n) * 0.01 + DVector::from_element(n, 0.001))
        .collect();
    let (forecast, joint_cov) = if stochastic {
        let f = normal_matrix(rng, n * m, n * m) * 0.01;
        let cov = &f * f.transpose() / (n * m) as f64;
        (MomentForecast::from_joint(means, &cov).unwrap(), cov)
    } else {
        (
            MomentForecast::deterministic(means).unwrap(),
            DMatrix::zeros(n * m, n * m),
        )
    };
    let spec = ConstraintSpec::uniform(n, -0.6, 3.0, 3.0).unwrap();
    Instance {
        market,
        state,
        ctx,
        forecast,
        spec,
        joint_cov,
    }
}

/// Per-path value of the reduced criterion
/// `Σ_{i=1}^m [V(k+i)² − R1(k,i) V(k+i)] + Σ_{i=0}^{m−1} Δu_iᵀ R(k,i) Δu_i`,
/// with wealth simulated through the one-period dynamics along `path`.
pub fn simulated_objective(inst: &Instance, u: &DVector<f64>, path: &[DVector<f64>]) -> f64 {
    let n = inst.n();
    let b = n + 1;
    let ctx = &inst.ctx;
    let mut v = inst.state.wealth;
    let mut total = 0.0;
    for (i, eta) in path.iter().enumerate() {
        let ui = u.rows(i * b, b).into_owned();
        v = wealth_step(v, &ui, eta, &inst.market).unwrap();
        total += v * v - ctx.r1(i + 1) * v;
    }
    total + cost_sum(inst, u)
}

/// `Σ_{i=0}^{m−1} (u_i − u_{i−1})ᵀ R(k,i) (u_i − u_{i−1})` with `u_{−1} = u(k−1)`.
pub fn cost_sum(inst: &Instance, u: &DVector<f64>) -> f64 {
    let b = inst.n() + 1;
    let mut prev = inst.state.prev_control.clone();
    let mut total = 0.0;
    for i in 0..inst.m() {
        let ui = u.rows(i * b, b).into_owned();
        let d = &ui - &prev;
        total += d.dot(&(&inst.ctx.cost[i] * &d));
        prev = ui;
    }
    total
}

/// Terms of the criterion that do not depend on `U`:
/// `V² Σ A^{2i} − V Σ R1(k,i) A^i + u(k−1)ᵀ R(k,0) u(k−1)`.
pub fn objective_constant(inst: &Instance) -> f64 {
    let v = inst.state.wealth;
    let a = inst.ctx.growth;
    let mut c = 0.0;
    for i in 1..=inst.m() {
        let ai = a.powi(i as i32);
        c += v * v * ai * ai - v * inst.ctx.r1(i) * ai;
    }
    let u = &inst.state.prev_control;
    c + u.dot(&(&inst.ctx.cost[0] * u))
}

/// Draws one horizon path from the instance's Gaussian forecast.
pub fn draw_path(inst: &Instance, factor: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = inst.n();
    let z = factor * normal_vector(rng, factor.ncols());
    (0..inst.m())
        .map(|i| inst.forecast.mean(i + 1) + z.rows(i * n, n))
        .collect()
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

pub fn rel_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

/// Random strictly convex QP with `rows <= dim` constraint rows, a known feasible
/// point, and a mix of two-sided, one-sided, infinite and equality bounds.
pub fn random_qp(rng: &mut ChaCha8Rng, dim: usize, rows: usize) -> QpProblem {
    let (scale, floor) = (rng.random_range(0.5..5.0), rng.random_range(0.05..1.0));
    let p = random_spd(rng, dim, scale, floor);
    let q = normal_vector(rng, dim) * rng.random_range(0.5..5.0);
    let c = normal_matrix(rng, rows, dim);
    let x0 = normal_vector(rng, dim) * 0.3;
    let s0 = &c * &x0;
    let mut lower = DVector::zeros(rows);
    let mut upper = DVector::zeros(rows);
    for i in 0..rows {
        let kind: f64 = rng.random();
        let lo = s0[i] - rng.random_range(0.0..0.5);
        let hi = s0[i] + rng.random_range(0.0..0.5);
        let (l, h) = if kind < 0.1 {
            (s0[i], s0[i])
        } else if kind < 0.25 {
            (f64::NEG_INFINITY, hi)
        } else if kind < 0.4 {
            (lo, f64::INFINITY)
        } else if kind < 0.45 {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (lo, hi)
        };
        lower[i] = l;
        upper[i] = h;
    }
    QpProblem {
        p,
        q,
        c,
        lower,
        upper,
    }
}

/// Reference solution by projected gradient.
///
/// For full-row-rank `C` write `u = T s + N z` with `C T = I`, `C N = 0`, minimise
/// out the free `z` exactly, and run accelerated projected gradient (with adaptive
/// restart) on the box-constrained reduced problem in `s = C u`. Runs until the
/// gradient-mapping residual vanishes, the objective stops decreasing, or
/// `max_iter` iterations.
pub fn projected_gradient_reference(problem: &QpProblem, max_iter: usize) -> DVector<f64> {
    let dim = problem.dim();
    let rows = problem.c.nrows();
    let p = &problem.p;
    let q = &problem.q;
    if rows == 0 {
        return -p.clone().cholesky().unwrap().solve(q);
    }
    let ct = problem.c.transpose();
    let qr = ct.clone().qr();
    let q1 = qr.q();
    let r = qr.r();
    // T = Q1 R^{-T}
    let rt_inv = r.transpose().try_inverse().expect("constraint rows are dependent");
    let t = &q1 * rt_inv;
    let proj = DMatrix::identity(dim, dim) - &q1 * q1.transpose();
    let eig = proj.symmetric_eigen();
    let null_cols: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    let nmat = DMatrix::from_fn(dim, null_cols.len(), |i, j| eig.eigenvectors[(i, null_cols[j])]);

    // reduced Hessian M and linear term c in s
    let (m, c, z_of_s) = if nmat.ncols() == 0 {
        let m = t.transpose() * p * &t;
        let c = t.transpose() * q;
        (m, c, None)
    } else {
        let pnn = nmat.transpose() * p * &nmat;
        let chol = pnn.cholesky().unwrap();
        let pnt = nmat.transpose() * p * &t;
        let nq = nmat.transpose() * q;
        let m = t.transpose() * p * &t - pnt.transpose() * chol.solve(&pnt);
        let c = t.transpose() * q - pnt.transpose() * chol.solve(&nq);
        (m, c, Some((chol, pnt, nq)))
    };
    let m = (&m + m.transpose()) * 0.5;
    let lip = m.clone().symmetric_eigen().eigenvalues.max();
    let step = 1.0 / lip;
    let project = |s: &mut DVector<f64>| {
        for i in 0..rows {
            s[i] = s[i].clamp(problem.lower[i], problem.upper[i]);
        }
    };
    let obj = |s: &DVector<f64>| 0.5 * s.dot(&(&m * s)) + c.dot(s);

    let mut s = DVector::zeros(rows);
    for i in 0..rows {
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        s[i] = if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            lo
        } else if hi.is_finite() {
            hi
        } else {
            0.0
        };
    }
    let mut y = s.clone();
    let mut theta: f64 = 1.0;
    let mut prev_obj = obj(&s);
    let mut stalled = 0;
    for it in 0..max_iter {
        if it % 10 == 0 {
            // gradient-mapping residual at s
            let mut g = &s - (&m * &s + &c) * step;
            project(&mut g);
            if (&g - &s).amax() / step <= 1e-12 * (1.0 + c.amax()) {
                break;
            }
        }
        let mut next = &y - (&m * &y + &c) * step;
        project(&mut next);
        let f = obj(&next);
        if f >= prev_obj {
            // adaptive restart; a run of steps without decrease means the
            // iterate sits at the rounding floor
            stalled += 1;
            if stalled > 1000 {
                break;
            }
            theta = 1.0;
            y = s.clone();
            continue;
        }
        stalled = 0;
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        y = &next + (&next - &s) * ((theta - 1.0) / theta_next);
        theta = theta_next;
        s = next;
        prev_obj = f;
    }
    match z_of_s {
        None => &t * s,
        Some((chol, pnt, nq)) => {
            let z = -chol.solve(&(pnt * &s + nq));
            &t * s + nmat * z
        }
    }
}

/// Random stable VAR(2) with spectral radius at most `max_radius`.
pub fn random_stable_var(rng: &mut ChaCha8Rng, n: usize, max_radius: f64) -> Var2Model {
    loop {
        let a1 = normal_matrix(rng, n, n) * (0.4 / (n as f64).sqrt());
        let a2 = normal_matrix(rng, n, n) * (0.2 / (n as f64).sqrt());
        let nu = normal_vector(rng, n) * 1e-3;
        let f = normal_matrix(rng, n, n) * 0.01;
        let sigma = &f * f.transpose() + DMatrix::identity(n, n) * 1e-5;
        let model = Var2Model::new(nu, a1, a2, sigma).unwrap();
        if model.spectral_radius() <= max_radius {
            return model;
        }
    }
}

/// Five-asset return model with the given unconditional daily means, mild serial
/// dependence and correlated Gaussian shocks of roughly `sd` daily volatility.
pub fn market_model(means: &[f64], sd: f64) -> Var2Model {
    let n = means.len();
    let a1 = DMatrix::from_fn(n, n, |i, j| if i == j { 0.05 } else { 0.01 });
    let a2 = DMatrix::from_fn(n, n, |i, j| if i == j { -0.03 } else { 0.0 });
    let corr = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.3 });
    let sigma = corr * (sd * sd);
    let mean = DVector::from_column_slice(means);
    let nu = (DMatrix::identity(n, n) - &a1 - &a2) * mean;
    Var2Model::new(nu, a1, a2, sigma).unwrap()
}

/// Random VAR(2) lag matrices with spectral radius at most `max_radius`, paired with
/// the given intercept and shock covariance.
pub fn random_var_with_noise(
    rng: &mut ChaCha8Rng,
    max_radius: f64,
    nu: DVector<f64>,
    sigma: DMatrix<f64>,
) -> Var2Model {
    let n = nu.len();
    loop {
        let a1 = normal_matrix(rng, n, n) * (0.4 / (n as f64).sqrt());
        let a2 = normal_matrix(rng, n, n) * (0.2 / (n as f64).sqrt());
        let model = Var2Model::new(nu.clone(), a1, a2, sigma.clone()).unwrap();
        if model.spectral_radius() <= max_radius {
            return model;
        }
    }
}

/// Equicorrelated shock covariance: volatility `sd`, pairwise correlation `corr`.
pub fn equicorrelated(n: usize, sd: f64, corr: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { sd * sd } else { corr * sd * sd })
}
