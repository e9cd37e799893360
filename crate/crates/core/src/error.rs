//! Error type shared by all core modules.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by geometry, refocusing, scene synthesis, focus measures,
/// metrics and dataset I/O.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller-supplied parameter is outside its documented range
    /// (non-positive depth, empty stack, bad grid shape, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Inputs are structurally valid but the operation is undefined on them
    /// (texture smaller than the frame plus its shift margin, scene with no
    /// visible region, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A value that must be finite (or within [0, 1] for image samples) is not.
    #[error("non-finite data: {0}")]
    NonFinite(String),

    /// Scene generation exhausted its retry budget without producing a
    /// non-degenerate layout.
    #[error("generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    /// Filesystem-level failure, annotated with the offending path. The
    /// underlying error is carried as the source, not repeated in the
    /// message, so chained reporters print it exactly once.
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not parse as the expected format.
    #[error("format error in {path}: {what}")]
    Format { path: PathBuf, what: String },

    /// A dataset manifest references files or values that do not hold up
    /// against the tree on disk.
    #[error("manifest error: {0}")]
    Manifest(String),
}

impl CoreError {
    /// Shorthand for [`CoreError::Io`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Shorthand for [`CoreError::Format`].
    pub fn format(path: impl Into<PathBuf>, what: impl Into<String>) -> Self {
        CoreError::Format {
            path: path.into(),
            what: what.into(),
        }
    }
}

/// Convenience alias used throughout the core crate.
pub type Result<T> = std::result::Result<T, CoreError>;
