use mvreplica::Error;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_NOT_PD: i32 = 3;
pub const EXIT_SINGULAR_TRIALS: i32 = 4;
pub const EXIT_CHECK_FAILED: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] Error),

    #[error("too many singular trials: skip fraction {fraction:.4} exceeds threshold {threshold:.4}")]
    ExcessiveSkips { fraction: f64, threshold: f64 },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                Error::DegenerateReturns { .. } => EXIT_DEGENERATE,
                Error::NotPositiveDefinite { .. } | Error::Asymmetric { .. } => EXIT_NOT_PD,
                Error::SingularSampleCovariance { .. } => EXIT_SINGULAR_TRIALS,
                _ => EXIT_USAGE,
            },
            CliError::ExcessiveSkips { .. } => EXIT_SINGULAR_TRIALS,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
