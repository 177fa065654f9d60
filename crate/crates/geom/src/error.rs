use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: non-triangular face with {count} vertices")]
    NonTriangularFace { line: usize, count: usize },

    #[error("face {face} references vertex {index}, but mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },

    #[error("empty mesh")]
    EmptyMesh,

    #[error("degenerate face {0}")]
    DegenerateFace(usize),

    #[error("vertex {0} has a zero-length normal")]
    ZeroNormal(usize),

    #[error("mesh has zero extent")]
    ZeroExtent,

    #[error("invalid mesh: {0}")]
    Invalid(String),

    #[error("boundary edge ({0}, {1}) encountered")]
    BoundaryEdge(usize, usize),

    #[error("decimation stuck at {reached} faces (target {target})")]
    DecimationStuck { reached: usize, target: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed hierarchy cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MeshError>;
