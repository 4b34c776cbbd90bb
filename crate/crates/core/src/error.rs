use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("shape mismatch at layer {layer}: {detail}")]
    LayerShapeMismatch { layer: usize, detail: String },

    #[error("non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("matrix {rows}x{cols} exceeds the dense SVD limit of {limit}")]
    SizeExceeded { rows: usize, cols: usize, limit: usize },

    #[error("tape is stale or empty; run a fresh forward pass before backward")]
    TapeConsumed,

    #[error("zero vector passed where a direction is required")]
    ZeroVector,

    #[error("gradient has {available} singular directions but the spectrum needs {needed}")]
    RankDeficient { available: usize, needed: usize },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },

    #[error("label byte {value} at offset {offset} is out of range")]
    BadMagnitude { offset: usize, value: u8 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
