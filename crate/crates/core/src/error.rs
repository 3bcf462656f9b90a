use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {index}: {reason}")]
    Layer { index: usize, reason: String },

    #[error("stale or mismatched forward trace: {0}")]
    StaleTrace(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("invalid partition point {point} for a stack of {layers} layers")]
    PartitionPoint { point: usize, layers: usize },

    #[error("incompatible model halves: {0}")]
    IncompatibleHalves(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("non-finite value in tensor")]
    NonFinite,

    #[error("malformed record: {0}")]
    Record(String),

    #[error("activation switch is off at round {round} (rho = {rho})")]
    SwitchOff { round: u32, rho: u32 },

    #[error("replay buffer miss: device {device}, batch {batch}")]
    BufferMiss { device: u16, batch: u32 },

    #[error("fedavg: {0}")]
    Aggregation(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("idx: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    IdxMagic { found: u32, expected: u32 },

    #[error("idx: truncated payload ({0})")]
    IdxTruncated(String),

    #[error("idx: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("invalid network parameter: {0}")]
    Network(String),

    #[error("round {round}: {source}")]
    Round {
        round: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_round(self, round: u32) -> Self {
        Error::Round { round, source: Box::new(self) }
    }
}
