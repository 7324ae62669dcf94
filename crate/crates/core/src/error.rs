use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FshapeError>;

#[derive(Debug, Error)]
pub enum FshapeError {
    #[error("invalid fshape: {0}")]
    InvalidShape(String),

    #[error("degenerate cell {cell}: d-volume {volume:e} below threshold {threshold:e}")]
    DegenerateCell { cell: usize, volume: f64, threshold: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("non-finite value encountered at step {step} ({phase})")]
    NonFinite { step: usize, phase: &'static str },

    #[error("sphere radius left (0, inf) at t = {t}")]
    RadiusCollapse { t: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FshapeError {
    /// Errors caused by bad input or parameters map to exit code 1,
    /// numerical breakdowns and unexpected I/O failures to 2.
    pub fn is_user_error(&self) -> bool {
        match self {
            FshapeError::NonFinite { .. } | FshapeError::SolverDiverged { .. } => false,
            FshapeError::Io(e) => matches!(
                e.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied | std::io::ErrorKind::InvalidData
            ),
            _ => true,
        }
    }
}
