//! Historical and synthetic backtests of the tracking strategy.

mod data;
mod engine;
mod report;
mod synthetic;

pub use data::{
    load_prices, parse_prices, prices_to_returns, returns_to_prices, write_prices, PriceTable,
};
pub use engine::{run_backtest, BacktestConfig, StepDecision, Strategy};
pub use report::{
    emit_report, read_returns, read_steps, read_summary, replay_error, steps_table, summary_text,
    BacktestReport, StepRecord, StepRow, Summary, ALLOCATIONS_FILE, RETURNS_FILE, STEPS_FILE,
    SUMMARY_FILE, WEALTH_FILE,
};
pub use synthetic::{covariance_factor, simulate_synthetic, standard_normal_vector};
