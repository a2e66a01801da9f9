use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] pat_tensor::TensorError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("recording too short: no pixel delay falls inside the {n_steps}-sample window")]
    RecordingTooShort { n_steps: usize },

    #[error("sample {id}: {reason}")]
    Sample { id: String, reason: String },

    #[error("{split} index {index} out of range (split has {len} samples)")]
    IndexOutOfRange { split: String, index: usize, len: usize },

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64 },

    #[error("no usable masks in {0}")]
    NoMasks(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }
}
