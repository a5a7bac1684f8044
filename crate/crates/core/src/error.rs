use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents are incompatible with the operation.
    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },

    #[error("invalid variant name {name:?}: bad {field}")]
    Variant { name: String, field: &'static str },

    /// A connection inside a model configuration violates its channel or stride contract.
    #[error("build error at {edge}: {msg}")]
    Build { edge: String, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("weights error: {0}")]
    Weights(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("training diverged at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
