use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid initial point: {0}")]
    InvalidInitialPoint(String),

    /// The backtracking stepsize dropped below the configured floor without
    /// satisfying the descent test.
    #[error("line search failed at iteration {iteration}: stepsize {alpha:e} below floor after {trials} trials")]
    LineSearchFailure {
        iteration: usize,
        alpha: f64,
        trials: usize,
    },

    #[error("no valid initial point after {attempts} attempts: {reason}")]
    NoValidInitialPoint { attempts: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed instance file: {0}")]
    Format(String),

    #[error("instance file checksum mismatch")]
    Checksum,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
