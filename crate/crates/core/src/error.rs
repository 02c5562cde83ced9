use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("exterior degree k={k} outside 1..={dim}")]
    ExteriorDegree { k: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("orbit of `{system}` left the phase space at iterate {index}")]
    Escape { system: String, index: usize },

    #[error("`{system}` is not differentiable at iterate {iterate} of the orbit")]
    NonSmoothPoint { system: String, iterate: usize },

    #[error("`{system}` is not smooth; this estimator needs a C^1 map")]
    NonSmoothSystem { system: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("counterexample stage {stage}: {reason}")]
    Stage { stage: u32, reason: String },

    #[error("schedule violation at stage {stage}, iterate {iterate}: {reason}")]
    Schedule {
        stage: u32,
        iterate: u64,
        reason: String,
    },

    #[error("enumeration of {size} states exceeds the cutoff {cutoff}; use a smaller m")]
    EnumerationCutoff { size: u128, cutoff: u128 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
