//! Shared fixtures for the benchmarks.

use nalgebra::DMatrix;

use trackmpc::backtest::simulate_synthetic;
use trackmpc::{BacktestConfig, Var2Model};

/// `n`-asset market with mild autocorrelation and 1.5% daily volatility.
pub fn market_model(n: usize) -> Var2Model {
    let mean = nalgebra::DVector::from_fn(n, |i, _| 0.0004 * (i + 1) as f64);
    let a1 = DMatrix::from_fn(n, n, |i, j| if i == j { 0.05 } else { 0.01 });
    let a2 = DMatrix::identity(n, n) * -0.03;
    let sigma = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.3 }) * 0.015f64.powi(2);
    let nu = (DMatrix::identity(n, n) - &a1 - &a2) * mean;
    Var2Model::new(nu, a1, a2, sigma).expect("fixture model is valid")
}

/// Default configuration and `rows` simulated returns for `n` assets.
pub fn fixture(n: usize, horizon: usize, rows: usize) -> (BacktestConfig, DMatrix<f64>) {
    let mut config = BacktestConfig::defaults(n);
    config.horizon = horizon;
    let returns = simulate_synthetic(&market_model(n), rows, 1, false).expect("simulation");
    (config, returns)
}
