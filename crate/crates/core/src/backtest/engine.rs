//! The receding-horizon loop: at each step fit or refresh the forecast, assemble and
//! solve the horizon QP, apply the first control to the next realized return.

use std::collections::BTreeMap;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::report::{BacktestReport, StepRecord};
use crate::error::{ensure_len, Error, Result};
use crate::forecast::{
    estimate_var2, predict_means, predict_second_moments, trend_adjusted_intercept,
    MomentForecast, Var2Model,
};
use crate::model::{
    benchmark_step, constraint_bounds, constraint_violation, wealth_step, ConstraintSpec,
    MarketParams, PortfolioState, TradeDecision,
};
use crate::qp::{assemble_qp, extract_control, QpBuildContext, QpProblem};
use crate::solver::{solve_warm, QpSolution, SolverSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub market: MarketParams,
    pub constraints: ConstraintSpec,
    pub horizon: usize,
    /// Tracking weight `ρ(k, i)`, constant over the horizon.
    pub rho: f64,
    /// Diagonal of the transaction-cost matrix `R(k, i)` (`n + 1` entries).
    pub cost_diag: Vec<f64>,
    /// Per-step replacements of `rho`, keyed by step index.
    #[serde(default)]
    pub rho_overrides: BTreeMap<usize, f64>,
    /// Per-step replacements of `cost_diag`, keyed by step index.
    #[serde(default)]
    pub cost_overrides: BTreeMap<usize, Vec<f64>>,
    pub estimation_window: usize,
    pub trend_window: usize,
    /// First decision step (return-row index); defaults to `estimation_window`.
    pub start: Option<usize>,
    /// Exclusive end of decision steps; defaults to the last step with a following return.
    pub end: Option<usize>,
    pub initial_wealth: f64,
    /// Refit the VAR on the trailing window at every step instead of once.
    pub reestimate: bool,
    /// Clamp each predicted mean return to `[-c, c]`.
    pub mean_clamp: Option<f64>,
    pub rbar_with_terminal_cost: bool,
    pub solver: SolverSettings,
    pub seed: u64,
}

impl BacktestConfig {
    /// Daily setting with five risky assets tracking 0.15% per day.
    pub fn defaults(n: usize) -> Self {
        Self {
            market: MarketParams {
                n,
                lending_rate: 0.0001,
                borrowing_rate: 0.0002,
                benchmark_rate: 0.0015,
            },
            constraints: ConstraintSpec {
                beta: vec![-0.6; n],
                gamma: vec![3.0; n + 1],
                gamma0: 3.0,
            },
            horizon: 10,
            rho: 0.1,
            cost_diag: vec![1e-4; n + 1],
            rho_overrides: BTreeMap::new(),
            cost_overrides: BTreeMap::new(),
            estimation_window: 200,
            trend_window: 2,
            start: None,
            end: None,
            initial_wealth: 1.0,
            reestimate: false,
            mean_clamp: None,
            rbar_with_terminal_cost: false,
            solver: SolverSettings::default(),
            seed: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.market.n
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        self.market.validate()?;
        self.constraints.validate(n)?;
        let invalid = |msg: String| Err(Error::InvalidParameter(msg));
        if self.horizon == 0 {
            return invalid("horizon must be at least 1".into());
        }
        if self.estimation_window < 2 * n + 3 {
            return invalid(format!(
                "estimation_window {} is below 2n+3 = {}",
                self.estimation_window,
                2 * n + 3
            ));
        }
        if self.estimation_window < crate::forecast::min_observations(n) {
            return invalid(format!(
                "estimation_window {} is too short for a VAR(2) fit on {n} assets (need {})",
                self.estimation_window,
                crate::forecast::min_observations(n)
            ));
        }
        if self.trend_window == 0 || self.trend_window > self.estimation_window {
            return invalid(format!(
                "trend_window {} must be between 1 and estimation_window",
                self.trend_window
            ));
        }
        if let Some(start) = self.start {
            if start < self.estimation_window {
                return invalid(format!(
                    "start {start} precedes the end of the estimation window {}",
                    self.estimation_window
                ));
            }
        }
        if !(self.initial_wealth > 0.0 && self.initial_wealth.is_finite()) {
            return invalid(format!("initial wealth {} must be positive", self.initial_wealth));
        }
        if !(self.rho > 0.0) || self.rho_overrides.values().any(|r| !(*r > 0.0)) {
            return invalid("rho must be positive".into());
        }
        for diag in std::iter::once(&self.cost_diag).chain(self.cost_overrides.values()) {
            ensure_len("transaction-cost diagonal", n + 1, diag.len())?;
            if diag.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                return invalid("transaction costs must be positive".into());
            }
        }
        if let Some(c) = self.mean_clamp {
            if !(c > 0.0) {
                return invalid(format!("mean clamp {c} must be positive"));
            }
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return invalid("solver tolerance and iteration budget must be positive".into());
        }
        Ok(())
    }

    pub fn rho_at(&self, step: usize) -> f64 {
        self.rho_overrides.get(&step).copied().unwrap_or(self.rho)
    }

    pub fn cost_at(&self, step: usize) -> DMatrix<f64> {
        let diag = self.cost_overrides.get(&step).unwrap_or(&self.cost_diag);
        DMatrix::from_diagonal(&DVector::from_column_slice(diag))
    }

    /// Decision steps `[start, end)` for a return matrix with `rows` rows.
    pub fn step_range(&self, rows: usize) -> Result<std::ops::Range<usize>> {
        let start = self.start.unwrap_or(self.estimation_window);
        let last = rows.saturating_sub(1);
        let end = self.end.unwrap_or(last).min(last);
        if start >= end {
            return Err(Error::InsufficientData {
                needed: start + 2,
                got: rows,
            });
        }
        Ok(start..end)
    }
}

#[derive(Debug, Clone)]
pub struct StepDecision {
    pub decision: TradeDecision,
    pub solution: QpSolution,
    pub problem: QpProblem,
    pub forecast: MomentForecast,
}

/// Decision rule holding the fitted return model.
#[derive(Debug, Clone)]
pub struct Strategy {
    config: BacktestConfig,
    model: Var2Model,
}

impl Strategy {
    /// Fits the VAR on the `estimation_window` rows ending at `history`'s last row.
    pub fn calibrate(config: BacktestConfig, history: &DMatrix<f64>) -> Result<Self> {
        config.validate()?;
        let model = fit_window(&config, history)?;
        Ok(Self { config, model })
    }

    pub fn with_model(config: BacktestConfig, model: Var2Model) -> Result<Self> {
        config.validate()?;
        ensure_len("model dimension", config.n(), model.dim())?;
        Ok(Self { config, model })
    }

    pub fn model(&self) -> &Var2Model {
        &self.model
    }

    pub fn config(&self) -> &BacktestConfig {
        &self.config
    }

    /// Moments over the horizon given returns observed up to and including `history`'s
    /// last row.
    pub fn forecast(&self, history: &DMatrix<f64>) -> Result<MomentForecast> {
        let rows = history.nrows();
        let w = self.config.trend_window;
        if rows < w.max(2) {
            return Err(Error::InsufficientData {
                needed: w.max(2),
                got: rows,
            });
        }
        let model = if self.config.reestimate {
            fit_window(&self.config, history)?
        } else {
            self.model.clone()
        };
        let recent = history.rows(rows - w, w).into_owned();
        let intercept = trend_adjusted_intercept(&model, &recent)?;
        let eta_k = history.row(rows - 1).transpose();
        let eta_km1 = history.row(rows - 2).transpose();
        let means = predict_means(
            &model,
            &intercept,
            &eta_k,
            &eta_km1,
            self.config.horizon,
            self.config.mean_clamp,
        )?;
        predict_second_moments(&model, means)
    }

    /// Chooses `u(k)` from returns up to row `k` (the last row of `history`).
    pub fn decide(
        &self,
        history: &DMatrix<f64>,
        state: &PortfolioState,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<StepDecision> {
        let cfg = &self.config;
        let n = cfg.n();
        let m = cfg.horizon;
        ensure_len("history columns", n, history.ncols())?;
        let forecast = self.forecast(history)?;
        let cost = cfg.cost_at(state.step);
        let mut ctx = QpBuildContext::constant(
            &cfg.market,
            m,
            state.benchmark,
            cfg.rho_at(state.step),
            cost.clone(),
        )?;
        ctx.rbar_with_terminal_cost = cfg.rbar_with_terminal_cost;
        let problem = assemble_qp(state, &ctx, &forecast, &cfg.constraints)?;
        let zero = DVector::zeros(problem.dim());
        let solution = solve_warm(&problem, &cfg.solver, warm_start.unwrap_or(&zero))?;
        let control = extract_control(&solution.u_star, n, m)?;
        let decision = TradeDecision::new(control, state.wealth, &state.prev_control, &cost)?;
        Ok(StepDecision {
            decision,
            solution,
            problem,
            forecast,
        })
    }
}

fn fit_window(config: &BacktestConfig, history: &DMatrix<f64>) -> Result<Var2Model> {
    let w = config.estimation_window;
    if history.nrows() < w {
        return Err(Error::InsufficientData {
            needed: w,
            got: history.nrows(),
        });
    }
    let window = history.rows(history.nrows() - w, w).into_owned();
    let model = estimate_var2(&window)?;
    let radius = model.spectral_radius();
    if radius >= 1.0 {
        warn!("fitted VAR(2) is not stable (spectral radius {radius:.4}); forecasts may diverge");
    }
    Ok(model)
}

/// Shifts a stacked solution one block forward, repeating the last block.
fn shifted(u: &DVector<f64>, block: usize) -> DVector<f64> {
    let len = u.len();
    let mut out = DVector::zeros(len);
    out.rows_mut(0, len - block)
        .copy_from(&u.rows(block, len - block));
    out.rows_mut(len - block, block)
        .copy_from(&u.rows(len - block, block));
    out
}

/// Runs the strategy over `returns` (one row per period, row `k + 1` realized after
/// the decision at step `k`).
///
/// Stops early with the ruin flag set when wealth reaches zero; a solve that does not
/// end optimal aborts with [`Error::SolverFailure`].
pub fn run_backtest(config: &BacktestConfig, returns: &DMatrix<f64>) -> Result<BacktestReport> {
    config.validate()?;
    let n = config.n();
    ensure_len("return columns", n, returns.ncols())?;
    let steps = config.step_range(returns.nrows())?;
    let start = steps.start;

    let strategy = Strategy::calibrate(config.clone(), &returns.rows(0, start + 1).into_owned())?;
    let mut state = PortfolioState::initial(n, config.initial_wealth);
    state.step = start;
    let mut warm: Option<DVector<f64>> = None;
    let mut records = Vec::with_capacity(steps.len());
    let mut ruin = false;

    for k in steps {
        let history = returns.rows(0, k + 1).into_owned();
        let step = strategy.decide(&history, &state, warm.as_ref())?;
        if !step.solution.is_optimal() {
            return Err(Error::SolverFailure {
                step: k,
                status: step.solution.status.to_string(),
            });
        }
        let (lower, upper) = constraint_bounds(&state, &config.constraints)?;
        let violation = constraint_violation(&step.decision.control, &lower, &upper);
        debug!(
            "step {k}: V={:.6} V0={:.6} iterations={} violation={violation:.2e}",
            state.wealth, state.benchmark, step.solution.iterations
        );

        let realized = returns.row(k + 1).transpose();
        let wealth = wealth_step(state.wealth, &step.decision.control, &realized, &config.market)?;
        let benchmark = benchmark_step(state.benchmark, config.market.benchmark_rate)?;
        warm = Some(shifted(&step.solution.u_star, n + 1));

        records.push(StepRecord {
            k,
            date: None,
            wealth_before: state.wealth,
            benchmark_before: state.benchmark,
            wealth,
            benchmark,
            control: step.decision.control.clone(),
            risk_free: step.decision.risk_free,
            trade: step.decision.trade.clone(),
            cost: step.decision.cost,
            status: step.solution.status,
            iterations: step.solution.iterations,
            constraint_violation: violation,
            returns: realized,
        });

        state = PortfolioState {
            step: k + 1,
            wealth,
            benchmark,
            prev_control: step.decision.control,
        };
        if wealth <= 0.0 {
            warn!("wealth exhausted after step {k} (V = {wealth})");
            ruin = true;
            break;
        }
    }
    Ok(BacktestReport::new(
        n,
        config.initial_wealth,
        records,
        ruin,
    ))
}
