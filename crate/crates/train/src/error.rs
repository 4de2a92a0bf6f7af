use std::path::PathBuf;

use avs_core::AvsError;
use avs_data::DataError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] AvsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("{}: not a checkpoint: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("checkpoint and dataset disagree: {0}")]
    Mismatch(String),
    #[error("incompatible parameter shapes: {}", .0.join(", "))]
    IncompatibleShapes(Vec<String>),
    #[error("checkpoint has no TPAVI stage {0}")]
    FusionAbsent(usize),
    #[error("{samples} samples cannot form {clusters} clusters")]
    TooFewSamples { samples: usize, clusters: usize },
}

pub type Result<T> = std::result::Result<T, TrainError>;

impl TrainError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainError::Io { path: path.into(), source }
    }
}
