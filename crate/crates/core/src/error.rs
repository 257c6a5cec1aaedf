use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    Dimension {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("point is not on the manifold: constraint residual {residual:e} exceeds {tol:e}")]
    Infeasible { residual: f64, tol: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value in {0}; optimizer state is poisoned")]
    NonFinite(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error("unexpected end of data: needed {needed} bytes, found {found}")]
    Length { needed: usize, found: usize },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
