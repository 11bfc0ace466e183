use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidParams(String),

    #[error("free surface at or below the bed at x = {x} (eta = {eta}, bed = {bed})")]
    NondegenerateDomainViolated { x: f64, eta: f64, bed: f64 },

    #[error("surface update penetrates the bed at x = {x} (eta = {eta}, bed = {bed})")]
    SurfacePenetratesBed { x: f64, eta: f64, bed: f64 },

    #[error("invalid bed profile: {0}")]
    InvalidBed(String),

    #[error("surface needs at least 3 stations, got {0}")]
    TooFewStations(usize),

    #[error("stations must be strictly increasing")]
    UnorderedStations,

    #[error("Froude number must be positive, got {0}")]
    NonpositiveFroude(f64),

    #[error("Bernoulli coefficient a must be nonzero")]
    SingularSurfaceBlock,

    #[error("field has {got} values but mesh has {expected} nodes")]
    MeshFieldMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: matrix is {rows}x{cols}, vector has {len}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("singular matrix: pivot {pivot:e} at step {step}")]
    SingularMatrix { step: usize, pivot: f64 },

    #[error("linear solve residual {residual:e} exceeds bound {bound:e}")]
    ResidualBound { residual: f64, bound: f64 },

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("invalid case: {0}")]
    InvalidCase(String),
}

pub type Result<T> = std::result::Result<T, Error>;
