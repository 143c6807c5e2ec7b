use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("no unique stationary distribution: {0}")]
    NoUniqueStationary(String),

    #[error("constrained problem is infeasible (minimal attainable cost {min_cost:.6e})")]
    Infeasible { min_cost: f64 },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("solver certificate check failed: {0}")]
    Certificate(String),

    #[error("iteration limit reached: {0}")]
    IterationLimit(String),

    #[error("degenerate normalization: optimal and data values differ by {gap:.3e}")]
    DegenerateNormalization { gap: f64 },

    #[error("insufficient episodes: requested {requested}, available {available}")]
    InsufficientEpisodes { requested: usize, available: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}
