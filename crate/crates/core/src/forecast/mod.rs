//! Return forecasting: VAR(2) estimation and the horizon moments consumed by the
//! QP assembly.

mod moments;
mod var;

pub use moments::{predict_second_moments, MomentForecast};
pub use var::{
    estimate_var2, ma_coefficients, min_observations, predict_means, trend_adjusted_intercept,
    Var2Model,
};
