use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unsupported colorspace conversion: {from} -> {to}")]
    UnsupportedConversion { from: String, to: String },

    #[error("image contains non-finite pixel values")]
    NonFinitePixels,

    #[error("image {height}x{width} too small for grid {n_h}x{n_w} with margin {margin}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        n_h: usize,
        n_w: usize,
        margin: f64,
    },

    #[error("piece count mismatch: expected {expected}, got {got}")]
    PieceCountMismatch { expected: usize, got: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("requested {requested} permutations but only {available} exist")]
    TooManyPermutations { requested: u64, available: u64 },

    #[error("border width {alpha} degenerate for {height}x{width} image")]
    DegenerateBorder {
        alpha: usize,
        height: usize,
        width: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class {0} has fewer than 2 samples")]
    TooFewSamples(String),

    #[error("unknown class label {0}")]
    UnknownLabel(usize),

    #[error("no calibration table for task {0}")]
    MissingCalibration(String),

    #[error("metric requires both classes present")]
    SingleClass,

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CoreError {
    /// CLI exit code for this error family (config 2, data 3, checkpoint 4).
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Config(_) => 2,
            CoreError::Data(_) | CoreError::EmptyInput(_) => 3,
            CoreError::Checkpoint(_) => 4,
            _ => 1,
        }
    }
}
