//! Error types shared across the crate.

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation precondition (dimension mismatch, empty
    /// input, out-of-range parameter).
    #[error("argument error: {0}")]
    Argument(String),

    /// A linear solve or factorization failed beyond the jitter ladder.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The new observation is numerically indistinguishable from an existing
    /// point; accepting it would make the Gram matrix singular. The caller is
    /// expected to fold the value into the existing record instead.
    #[error(
        "duplicate input point (nearest existing index {nearest}, schur complement {denom:.3e})"
    )]
    DuplicateInput { nearest: usize, denom: f64 },

    /// Removing the requested point would divide by a vanishing pivot.
    #[error("removal singular at index {index} (pivot {pivot:.3e})")]
    RemovalSingular { index: usize, pivot: f64 },

    /// An observation-utility score could not be evaluated.
    #[error("scoring error: {0}")]
    Scoring(String),

    /// A scenario or assumption validator rejected the configuration.
    #[error("validation failed: {0}")]
    Validation(String),

    /// Reading or writing a file failed.
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
