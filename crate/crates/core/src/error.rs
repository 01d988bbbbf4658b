use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A Cholesky pivot fell below the positive-definiteness tolerance.
    #[error("covariance is not positive definite: pivot {index} is {pivot:e} (tolerance {tolerance:e})")]
    NotPositiveDefinite {
        index: usize,
        pivot: f64,
        tolerance: f64,
    },

    #[error("covariance is not symmetric: max |s_ij - s_ji| = {max_abs_diff:e} exceeds {tolerance:e}")]
    Asymmetric { max_abs_diff: f64, tolerance: f64 },

    /// Means are collinear with the ones vector, so AC - B^2 vanishes.
    #[error("degenerate returns: AC - B^2 = {discriminant:e} is below {threshold:e} (means collinear with ones)")]
    DegenerateReturns { discriminant: f64, threshold: f64 },

    #[error("KKT system is numerically singular")]
    SingularKkt,

    #[error("sample covariance is singular (N = {n_assets}, T = {t_obs})")]
    SingularSampleCovariance { n_assets: usize, t_obs: usize },

    #[error("{name} = {value} is outside its domain {domain}")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need at least {required} points, got {got}")]
    InsufficientPoints { required: usize, got: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
