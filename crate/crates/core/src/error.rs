use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("time index {index} out of range (last step index is {last})")]
    TimeIndexOutOfRange { index: usize, last: usize },

    #[error("action index {index} out of range for mesh of size {size}")]
    ActionIndexOutOfRange { index: usize, size: usize },

    #[error("non-finite {what} at step {step}: {detail}")]
    NonFinite {
        what: &'static str,
        step: usize,
        detail: String,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("cannot parse mesh spec {spec:?}: {reason}")]
    MeshSpec { spec: String, reason: String },

    #[error("mesh point {point:?} lies outside {set}")]
    MeshOutsideSet { point: Vec<f64>, set: String },

    #[error("empty sample list")]
    EmptySamples,

    #[error("invalid payoff matrix: {0}")]
    InvalidMatrix(String),

    #[error("matrix game solver did not converge (achieved epsilon {epsilon:e})")]
    NashNonConvergence { epsilon: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient entry at parameter {0}")]
    NonFiniteGradient(usize),

    #[error("training diverged at step {step}: loss {loss}; last batch: {batch_dump}")]
    Diverged {
        step: usize,
        loss: f64,
        batch_dump: String,
    },

    #[error("unknown {kind} {name:?}")]
    Unknown { kind: &'static str, name: String },

    #[error("grid solver supports state dimension <= 3, got {0}")]
    UnsupportedDimension(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
