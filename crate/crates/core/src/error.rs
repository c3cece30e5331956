use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid bounds: need min < max on both axes (x: [{x_min}, {x_max}], y: [{y_min}, {y_max}])")]
    InvalidBounds {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    #[error("grid needs at least 3 nodes per axis, got {0}")]
    TooFewNodes(usize),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at node ({j}, {k})")]
    NonFinite { j: usize, k: usize },
    #[error("{name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("action curvature matrix is singular at ({x}, {y})")]
    SingularCurvature { x: f64, y: f64 },
    #[error("diffusion is degenerate: smallest eigenvalue of a = sigma sigma^T / 2 is {a_min}")]
    DegenerateDiffusion { a_min: f64 },
    #[error("zero center coefficient at interior node ({j}, {k})")]
    ZeroCenterCoefficient { j: usize, k: usize },
    #[error("state ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} norms, got {got}")]
    SequenceTooShort { needed: usize, got: usize },
}
