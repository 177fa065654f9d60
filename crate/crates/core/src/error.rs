use thiserror::Error;

use npmesh_geom::MeshError;
use npmesh_grad::GradError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed stream: {0}")]
    Format(String),
    #[error("topology: {0}")]
    Topology(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Format,
    Numerical,
}

impl CoreError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CoreError::Format(_) => ErrorKind::Format,
            CoreError::Numerical(_) => ErrorKind::Numerical,
            CoreError::Grad(GradError::Numerical { .. }) => ErrorKind::Numerical,
            CoreError::Grad(GradError::Checkpoint(_)) => ErrorKind::Format,
            _ => ErrorKind::Input,
        }
    }
}
