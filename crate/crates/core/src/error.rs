use std::path::PathBuf;

/// Errors surfaced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("rank must be at least 1")]
    ZeroRank,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("transition row {row} sums to {sum}, expected 1")]
    NonStochastic { row: usize, sum: f64 },

    #[error("value iteration did not converge after {iterations} sweeps (last change {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("training diverged: non-finite parameters at iteration {iteration}")]
    Diverged { iteration: u64 },

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: plot rendering failed: {message}")]
    Plot { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
