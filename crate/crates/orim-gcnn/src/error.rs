use thiserror::Error;

/// Errors from network construction, io, and training.
#[derive(Debug, Error)]
pub enum GcnnError {
    #[error("shape mismatch: got {got:?}, want {want}")]
    ShapeMismatch { got: Vec<usize>, want: String },
    #[error("layer {index} ({name}): {reason}")]
    BadLayer {
        index: usize,
        name: String,
        reason: String,
    },
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] orim_core::OrimError),
}
