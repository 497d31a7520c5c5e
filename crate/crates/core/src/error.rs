use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid grid, model, QOI, plan or file configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure at step {step}: {what}")]
    NumericalFailure { step: usize, what: String },

    /// A z-score test was asked to standardize against a zero (or negative) spread.
    #[error("degenerate baseline for {qoi} at step {step}: sigma = {sigma}")]
    DegenerateBaseline { qoi: String, step: usize, sigma: f64 },

    #[error("index out of range: {0}")]
    Bounds(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("member {member} (seed {seed}, mass {mass} Tg) failed: {source}")]
    Member {
        member: usize,
        seed: u64,
        mass: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Member { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
