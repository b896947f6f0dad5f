//! Receding-horizon (model predictive control) portfolio selection that tracks a
//! deterministic benchmark under hard trading limits, quadratic transaction costs and
//! distinct lending/borrowing rates, with returns forecast by a VAR(2).
//!
//! The pieces, bottom up:
//!
//! * [`model`]: wealth and benchmark dynamics, the constraint system.
//! * [`forecast`]: VAR(2) estimation and conditional moments over the horizon.
//! * [`qp`]: assembly of the horizon quadratic program (and an independent
//!   stacked-matrix construction used for cross-checking).
//! * [`solver`]: dense dual active-set QP solver with KKT certification.
//! * [`backtest`]: the daily receding-horizon loop, price I/O and reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod backtest;
pub mod error;
pub mod forecast;
pub mod model;
pub mod qp;
pub mod solver;

pub use backtest::{run_backtest, BacktestConfig, BacktestReport, Strategy};
pub use error::{Error, Result};
pub use forecast::{MomentForecast, Var2Model};
pub use model::{ConstraintSpec, MarketParams, PortfolioState, TradeDecision};
pub use qp::{assemble_qp, build_qp_oracle, QpBuildContext, QpProblem};
pub use solver::{solve, QpSolution, SolveStatus, SolverSettings};
