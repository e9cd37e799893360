//! Error type shared by the network, training, and checkpoint modules.

use std::path::PathBuf;

/// Errors produced while building, running, training, or persisting models.
#[derive(Debug, thiserror::Error)]
pub enum NetError {
    /// A caller-supplied argument is outside the accepted range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Tensor shapes are inconsistent with the model or with each other.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Training produced a non-finite loss or parameter and was aborted.
    #[error("training diverged at epoch {epoch}, batch {batch}: {what}")]
    Diverged {
        epoch: usize,
        batch: usize,
        what: String,
    },

    /// An underlying dataset or geometry operation failed.
    #[error(transparent)]
    Core(#[from] ddff_core::CoreError),

    /// Reading or writing a checkpoint file failed.
    #[error("checkpoint i/o failed for {path}")]
    CheckpointIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A checkpoint file exists but its contents are not usable.
    #[error("invalid checkpoint {path}: {what}")]
    CheckpointFormat { path: PathBuf, what: String },
}

impl NetError {
    /// Wraps an I/O error with the checkpoint path it occurred on.
    pub fn ckpt_io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NetError::CheckpointIo {
            path: path.into(),
            source,
        }
    }

    /// Builds a checkpoint format error for `path`.
    pub fn ckpt_format(path: impl Into<PathBuf>, what: impl Into<String>) -> Self {
        NetError::CheckpointFormat {
            path: path.into(),
            what: what.into(),
        }
    }
}
