use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("parameter index theta[{index}] out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("non-integer exponent at position {pos}")]
    NonIntegerExponent { pos: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("credibility matrix is invalid: {0}")]
    InvalidSigma(String),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("tolerance must be positive, got c = {0}")]
    InfeasibleTolerance(f64),

    #[error("inner solver did not converge at c = {c} after {iterations} iterations (constraint residual {residual:.3e}, stationarity {stationarity:.3e})")]
    NonConvergence {
        c: f64,
        iterations: usize,
        residual: f64,
        stationarity: f64,
    },

    #[error("tolerance c = {c} is out of reach: h stays at {h:.6e} as the multiplier diverges")]
    Unreachable { c: f64, h: f64 },

    #[error("singular or ill-conditioned matrix: {0}")]
    Singular(String),

    #[error("second-order condition failed: a'A^-1 a = {0:.3e} <= 0")]
    SecondOrder(f64),

    #[error("negative variance on the diagonal at index {0}")]
    NegativeVariance(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{failed} of {total} replications failed, above the abort threshold")]
    TooManyFailures { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Syntax { .. }
            | Error::IndexOutOfRange { .. }
            | Error::NonIntegerExponent { .. }
            | Error::InvalidSigma(_)
            | Error::InfeasibleTolerance(_)
            | Error::Config(_) => 1,
            Error::Dimension(_) | Error::RankDeficient(_) | Error::Data(_) | Error::Io(_) => 2,
            Error::NonConvergence { .. }
            | Error::Unreachable { .. }
            | Error::Singular(_)
            | Error::SecondOrder(_)
            | Error::NegativeVariance(_)
            | Error::TooManyFailures { .. } => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}
