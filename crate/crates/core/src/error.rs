use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MafError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MafError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A model or run configuration breaks one of its invariants.
    #[error("invalid config: {0}")]
    Config(String),

    /// A synthetic-dataset specification is invalid.
    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    /// A file did not match the expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MafError {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        MafError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MafError::Io {
            path: path.into(),
            source,
        }
    }
}
