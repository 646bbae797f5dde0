//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two images fed to a pairwise operation do not share dimensions.
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    /// A scan carries no usable signal (all-zero / degenerate); the caller
    /// should skip the frame and let the filter coast on prediction.
    #[error("unusable scan: {0}")]
    UnusableScan(String),

    /// A matrix that must be inverted turned out singular.
    #[error("numerically degenerate: {0}")]
    Degenerate(String),

    /// A measurement event arrived with a timestamp behind the filter state.
    #[error("out-of-order event: event t={event_t}, state t={state_t}")]
    OutOfOrder { event_t: f64, state_t: f64 },

    /// Interpolation query outside the trajectory's time span.
    #[error("query t={query} outside trajectory span [{first}, {last}]")]
    OutOfRange { query: f64, first: f64, last: f64 },

    /// A dataset path or file failed to load or parse.
    #[error("dataset error ({path}): {message}")]
    Dataset { path: PathBuf, message: String },

    /// Synthetic scene specification cannot be realized.
    #[error("infeasible scene: {0}")]
    InfeasibleScene(String),

    /// Trajectory comparison is impossible (e.g. disjoint time spans).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Run configuration violates an invariant; names the offending field.
    #[error("config error ({field}): {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn dataset(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: msg.into(),
        }
    }

    /// Coarse failure category for process exit codes.
    pub fn category(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidInput(_) | Error::DimensionMismatch(..) => 2,
            Error::Dataset { .. } | Error::Io(_) | Error::InfeasibleScene(_) => 3,
            Error::Evaluation(_) | Error::OutOfRange { .. } => 4,
            Error::UnusableScan(_) | Error::Degenerate(_) | Error::OutOfOrder { .. } => 5,
        }
    }
}
