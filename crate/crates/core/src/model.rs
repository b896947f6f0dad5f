//! Portfolio model: wealth and benchmark dynamics and the trading constraint system.
//!
//! A control vector has `n + 1` entries: the amounts held in the `n` risky assets
//! followed by the amount borrowed at the borrowing rate. The risk-free holding is
//! not a decision variable; it is whatever is left of the wealth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Number of risky assets.
    pub n: usize,
    /// Lending rate per period.
    pub lending_rate: f64,
    /// Borrowing rate per period, strictly above the lending rate.
    pub borrowing_rate: f64,
    /// Growth rate per period of the benchmark wealth.
    pub benchmark_rate: f64,
}

impl MarketParams {
    pub fn new(n: usize, lending_rate: f64, borrowing_rate: f64, benchmark_rate: f64) -> Result<Self> {
        let params = Self {
            n,
            lending_rate,
            borrowing_rate,
            benchmark_rate,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("need at least one risky asset".into()));
        }
        ensure_finite(
            "market rates",
            [&self.lending_rate, &self.borrowing_rate, &self.benchmark_rate],
        )?;
        if !(self.lending_rate < self.borrowing_rate) {
            return Err(Error::InvalidParameter(format!(
                "lending rate {} must be below borrowing rate {}",
                self.lending_rate, self.borrowing_rate
            )));
        }
        Ok(())
    }

    /// Gross growth of the risk-free account, `1 + r1`.
    pub fn growth(&self) -> f64 {
        1.0 + self.lending_rate
    }
}

/// Wealth-proportional trading limits.
///
/// Asset `i` is bounded by `beta[i] * V <= u_i <= gamma[i] * V`, borrowing by
/// `0 <= u_{n+1} <= gamma[n] * V` and the risk-free holding by `0 <= u0 <= gamma0 * V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma0: f64,
}

impl ConstraintSpec {
    /// Same fractions for every asset; the borrowing cap shares `gamma`.
    pub fn uniform(n: usize, beta: f64, gamma: f64, gamma0: f64) -> Result<Self> {
        let spec = Self {
            beta: vec![beta; n],
            gamma: vec![gamma; n + 1],
            gamma0,
        };
        spec.validate(n)?;
        Ok(spec)
    }

    pub fn n(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        ensure_len("constraint beta", n, self.beta.len())?;
        ensure_len("constraint gamma", n + 1, self.gamma.len())?;
        ensure_finite("constraint fractions", self.beta.iter().chain(&self.gamma))?;
        ensure_finite("constraint gamma0", [&self.gamma0])?;
        for (i, (b, g)) in self.beta.iter().zip(&self.gamma).enumerate() {
            if b > g {
                return Err(Error::InvalidParameter(format!(
                    "asset {}: lower fraction {b} exceeds upper fraction {g}",
                    i + 1
                )));
            }
        }
        if self.gamma[n] < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "borrowing fraction {} must be non-negative",
                self.gamma[n]
            )));
        }
        // u = 0, u0 = V must be admissible.
        if self.gamma0 < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "risk-free fraction {} must be at least 1",
                self.gamma0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub step: usize,
    pub wealth: f64,
    pub benchmark: f64,
    /// Control applied at the previous step, `n + 1` entries.
    pub prev_control: DVector<f64>,
}

impl PortfolioState {
    /// State at `k = 0`: no previous position and benchmark starting at the initial wealth.
    pub fn initial(n: usize, wealth: f64) -> Self {
        Self {
            step: 0,
            wealth,
            benchmark: wealth,
            prev_control: DVector::zeros(n + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeDecision {
    pub control: DVector<f64>,
    pub risk_free: f64,
    pub trade: DVector<f64>,
    pub cost: f64,
}

impl TradeDecision {
    /// Derives the risk-free holding, the trade and its quadratic cost `dᵀ R d`.
    pub fn new(
        control: DVector<f64>,
        wealth: f64,
        prev_control: &DVector<f64>,
        cost_matrix: &DMatrix<f64>,
    ) -> Result<Self> {
        ensure_len("previous control", control.len(), prev_control.len())?;
        ensure_len("cost matrix", control.len(), cost_matrix.nrows())?;
        let risk_free = risk_free_holding(wealth, &control)?;
        let trade = &control - prev_control;
        let cost = trade.dot(&(cost_matrix * &trade));
        Ok(Self {
            control,
            risk_free,
            trade,
            cost,
        })
    }
}

/// `u0 = V - Σ u_i + u_{n+1}`.
pub fn risk_free_holding(wealth: f64, control: &DVector<f64>) -> Result<f64> {
    if control.len() < 2 {
        return Err(Error::DimensionMismatch {
            what: "control",
            expected: 2,
            found: control.len(),
        });
    }
    let n = control.len() - 1;
    let risky: f64 = control.rows(0, n).sum();
    Ok(wealth - risky + control[n])
}

fn check_step_inputs(
    wealth: f64,
    control: &DVector<f64>,
    returns: &DVector<f64>,
    params: &MarketParams,
) -> Result<()> {
    ensure_len("control", params.n + 1, control.len())?;
    ensure_len("realized returns", params.n, returns.len())?;
    ensure_finite("wealth", [&wealth])?;
    ensure_finite("control", control.iter())?;
    ensure_finite("realized returns", returns.iter())?;
    if let Some(i) = returns.iter().position(|&r| r <= -1.0) {
        return Err(Error::InvalidParameter(format!(
            "return of asset {} is {} (must exceed -1)",
            i + 1,
            returns[i]
        )));
    }
    Ok(())
}

/// One-period wealth update in excess-return form:
/// `V' = (1 + r1) V + Σ (η_i − r1) u_i − (r2 − r1) u_{n+1}`.
pub fn wealth_step(
    wealth: f64,
    control: &DVector<f64>,
    returns: &DVector<f64>,
    params: &MarketParams,
) -> Result<f64> {
    check_step_inputs(wealth, control, returns, params)?;
    let n = params.n;
    let r1 = params.lending_rate;
    let excess: f64 = returns
        .iter()
        .zip(control.iter())
        .map(|(eta, u)| (eta - r1) * u)
        .sum();
    Ok(params.growth() * wealth + excess - (params.borrowing_rate - r1) * control[n])
}

/// The same update written over gross holdings, with the risk-free amount derived
/// from the budget identity.
pub fn wealth_step_gross(
    wealth: f64,
    control: &DVector<f64>,
    returns: &DVector<f64>,
    params: &MarketParams,
) -> Result<f64> {
    check_step_inputs(wealth, control, returns, params)?;
    let n = params.n;
    let u0 = risk_free_holding(wealth, control)?;
    let risky: f64 = returns
        .iter()
        .zip(control.iter())
        .map(|(eta, u)| (1.0 + eta) * u)
        .sum();
    Ok(risky + (1.0 + params.lending_rate) * u0 - (1.0 + params.borrowing_rate) * control[n])
}

pub fn benchmark_step(v0: f64, rate: f64) -> Result<f64> {
    ensure_finite("benchmark", [&v0, &rate])?;
    if v0 <= 0.0 {
        return Err(Error::InvalidParameter(format!("benchmark value {v0} must be positive")));
    }
    Ok((1.0 + rate) * v0)
}

/// `S = [[I_n, 0], [-1ᵀ, 1], [0, 1]]`, mapping a control onto the bounded quantities
/// (risky amounts, risk-free holding minus wealth, borrowing).
pub fn constraint_matrix(n: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n + 2, n + 1);
    for i in 0..n {
        s[(i, i)] = 1.0;
        s[(n, i)] = -1.0;
    }
    s[(n, n)] = 1.0;
    s[(n + 1, n)] = 1.0;
    s
}

/// Lower and upper bounds on `S u` at the current wealth.
pub fn constraint_bounds(
    state: &PortfolioState,
    spec: &ConstraintSpec,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let v = state.wealth;
    ensure_finite("wealth", [&v])?;
    if v <= 0.0 {
        return Err(Error::WealthExhausted { wealth: v });
    }
    Ok(scaled_bounds(v, spec))
}

fn scaled_bounds(v: f64, spec: &ConstraintSpec) -> (DVector<f64>, DVector<f64>) {
    let n = spec.n();
    let mut lower = DVector::zeros(n + 2);
    let mut upper = DVector::zeros(n + 2);
    for i in 0..n {
        lower[i] = spec.beta[i] * v;
        upper[i] = spec.gamma[i] * v;
    }
    lower[n] = -v;
    upper[n] = spec.gamma0 * v - v;
    lower[n + 1] = 0.0;
    upper[n + 1] = spec.gamma[n] * v;
    (lower, upper)
}

/// Largest violation of `lower <= S u <= upper` (zero when satisfied).
pub fn constraint_violation(
    control: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> f64 {
    let n = control.len() - 1;
    let su = constraint_matrix(n) * control;
    su.iter()
        .zip(lower.iter().zip(upper.iter()))
        .map(|(x, (lo, hi))| (lo - x).max(x - hi).max(0.0))
        .fold(0.0, f64::max)
}
