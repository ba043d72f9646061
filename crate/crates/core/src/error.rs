use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, empty input).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("generation error for object `{object}`: {message}")]
    Generation { object: String, message: String },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss {loss} on example `{example_id}` (epoch {epoch}, update {update})")]
    NonFiniteLoss {
        example_id: String,
        loss: f64,
        epoch: usize,
        update: u64,
    },

    #[error("gradient check failed: max relative error {max_rel_error:.3e} exceeds {tolerance:.1e}")]
    GradCheck { max_rel_error: f64, tolerance: f64 },

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
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics (non-finite loss, failed gradcheck)
    /// rather than by bad data or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::GradCheck { .. })
    }
}
