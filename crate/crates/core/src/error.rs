use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid {field}: {msg}")]
    Validation { field: &'static str, msg: String },

    #[error("band {lo_hz:.6e}..{hi_hz:.6e} Hz not covered by {which} trace ({have_lo:.6e}..{have_hi:.6e} Hz)")]
    Coverage {
        which: &'static str,
        lo_hz: f64,
        hi_hz: f64,
        have_lo: f64,
        have_hi: f64,
    },

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fit did not converge after {iterations} iterations (rms residual {rms:.3e}): {msg}")]
    NonConvergence {
        iterations: usize,
        rms: f64,
        msg: String,
    },

    #[error("fit optimum violates {0}")]
    InvalidOptimum(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(field: &'static str, msg: impl Into<String>) -> Self {
        Error::Validation {
            field,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised by an optimizer rather than by bad input.
    pub fn is_fit_failure(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::InvalidOptimum(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
