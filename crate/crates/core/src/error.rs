use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Wealth reached zero or below; the wealth-proportional bounds degenerate.
    #[error("wealth exhausted (V = {wealth})")]
    WealthExhausted { wealth: f64 },

    #[error("infeasible constraint bounds at row {row}: lower {lower} > upper {upper}")]
    InfeasibleBounds { row: usize, lower: f64, upper: f64 },

    #[error("not enough observations: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// Regressor matrix is rank deficient; lists the 0-based asset columns involved.
    #[error("rank-deficient regressors for asset column(s) {assets:?}")]
    RankDeficient { assets: Vec<usize> },

    #[error("horizon index out of range: t = {t}, f = {f}, horizon = {horizon}")]
    HorizonIndex { t: usize, f: usize, horizon: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("{path}: line {line}: {message}")]
    Data {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("solver failed at step {step}: {status}")]
    SolverFailure { step: usize, status: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn ensure_finite<'a>(
    what: &'static str,
    values: impl IntoIterator<Item = &'a f64>,
) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
