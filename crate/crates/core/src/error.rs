use thiserror::Error;

use crate::elliptic::EllipticSolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("coefficient must be positive, found {value} at index {index}")]
    DegenerateCoefficient { index: usize, value: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// CG hit `max_iter`; carries the best iterate seen.
    #[error("cell problem did not converge after {} iterations (residual {:e})", .0.iterations, .0.residual_norm)]
    CellProblemNotConverged(Box<EllipticSolveReport>),

    #[error("bordered Newton system is singular")]
    SingularJacobian,

    #[error("homotopy failed at s = {s}: {source}")]
    HomotopyFailed {
        s: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{} sample(s) failed, indices {indices:?}; first failure: {first}", indices.len())]
    SampleFailures { indices: Vec<usize>, first: String },

    #[error("input dimension {0} has zero variance across the training set")]
    ZeroVariance(usize),

    #[error("target vector has zero norm")]
    ZeroTargetNorm,

    #[error("noise level c = {0} outside [0, 1/2)")]
    InvalidNoiseLevel(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("wrong architecture: {0}")]
    WrongArchitecture(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
