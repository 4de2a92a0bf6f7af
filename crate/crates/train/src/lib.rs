//! Training engine, checkpoints and analysis tools behind the `avs` CLI.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod engine;
pub mod error;
pub mod run;

pub use checkpoint::{Checkpoint, EpochRecord};
pub use config::{InitMode, LrSchedule, TrainConfig};
pub use engine::{evaluate, prepare_all, train, transfer_init, Prepared, TrainOutcome};
pub use error::{Result, TrainError};
