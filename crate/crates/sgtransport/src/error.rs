use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("level {level} out of range 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("singular diagonal block at level pair ({0}, {1})")]
    SingularBlock(usize, usize),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("fixed-point iteration failed: {0}")]
    FixedPoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error("point outside domain: {0:?}")]
    OutOfDomain(Vec<f64>),

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
