use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record in a trace file could not be decoded or failed validation.
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("invalid trace `{id}`: {reason}")]
    InvalidTrace { id: String, reason: String },

    #[error("heterogeneous stream: trace `{id}` has {found} {what}, expected {expected}")]
    Heterogeneous {
        id: String,
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("trace stream is empty")]
    EmptyStream,

    #[error("trace has {found} layers but the cost model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("layer {layer} outside 1..={num_layers}")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("arm selection requested before every arm has been played once")]
    NotInitialized,

    #[error("arm index {index} out of range for {num_arms} arms")]
    ArmOutOfRange { index: usize, num_arms: usize },

    #[error("reward {reward} outside declared bounds [{lo}, {hi}]")]
    RewardOutOfBounds { reward: f64, lo: f64, hi: f64 },

    #[error("stream has {len} traces but {arms} are needed to play each arm once")]
    StreamTooShort { len: usize, arms: usize },

    #[error("malformed report: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by bad user input rather than a failed operation.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidParameter(_))
    }
}
