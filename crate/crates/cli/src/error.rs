use std::fmt;
use std::process::ExitCode;

/// Process exit status by failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Config = 2,
    Data = 3,
    Solver = 4,
    Ruin = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub class: Class,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            class: Class::Config,
            message: message.into(),
        }
    }

    pub fn schema(errors: Vec<String>) -> Self {
        Self::config(format!("invalid configuration:\n  {}", errors.join("\n  ")))
    }

    pub fn ruin(message: impl Into<String>) -> Self {
        CliError {
            class: Class::Ruin,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.class as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<trackmpc::Error> for CliError {
    fn from(e: trackmpc::Error) -> Self {
        use trackmpc::Error::*;
        let class = match &e {
            InvalidParameter(_) | NotPositiveDefinite(_) | DimensionMismatch { .. } => Class::Config,
            Data { .. } | Io { .. } | InsufficientData { .. } | RankDeficient { .. } | NonFinite(_) => {
                Class::Data
            }
            SolverFailure { .. } | InfeasibleBounds { .. } | HorizonIndex { .. } => Class::Solver,
            WealthExhausted { .. } => Class::Ruin,
        };
        CliError {
            class,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
