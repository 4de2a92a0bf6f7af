use thiserror::Error;

pub type Result<T> = std::result::Result<T, AvsError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AvsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("class id {id} out of range for {num_classes} classes")]
    ClassIdOutOfRange { id: u32, num_classes: usize },
    #[error("class id {0} has no palette entry")]
    UnknownClassId(u32),
    #[error("color ({}, {}, {}) has no palette entry", .0[0], .0[1], .0[2])]
    UnknownColor([u8; 3]),
    #[error("waveform too short: {samples} samples, need at least {needed}")]
    WaveformTooShort { samples: usize, needed: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("resolution {height}x{width} is not divisible by {divisor}")]
    IndivisibleResolution { height: usize, width: usize, divisor: usize },
    #[error("channel mismatch at {what}: expected {expected}, got {actual}")]
    ChannelMismatch { what: String, expected: usize, actual: usize },
    #[error("decoder expects 4 fused stages, got {0}")]
    StageCount(usize),
    #[error("no supervised frames in sample")]
    NoSupervisedFrames,
    #[error("AVM-VV pairing pool needs at least 2 clips, got {0}")]
    PoolTooSmall(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
}
