use std::path::PathBuf;

use avs_core::AvsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: corrupt image: {msg}", path.display())]
    CorruptImage { path: PathBuf, msg: String },
    #[error("{}: corrupt mask: {msg}", path.display())]
    CorruptMask { path: PathBuf, msg: String },
    #[error("{}: palette mismatch: {msg}", path.display())]
    PaletteMismatch { path: PathBuf, msg: String },
    #[error("{}: audio: {msg}", path.display())]
    Audio { path: PathBuf, msg: String },
    #[error("{}:{line}: {msg}", path.display())]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("inconsistent synthetic config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Core { context: String, source: AvsError },
}

pub type Result<T> = std::result::Result<T, DataError>;

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFile(path)
        } else {
            DataError::Io { path, source }
        }
    }

    pub(crate) fn core(context: impl Into<String>) -> impl FnOnce(AvsError) -> Self {
        let context = context.into();
        move |source| DataError::Core { context, source }
    }
}
