use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("corrupted episode: {0}")]
    CorruptedEpisode(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("advertiser {advertiser} policy returned a non-finite bidding parameter at period {period}")]
    PolicyFault { advertiser: usize, period: usize },

    #[error("unknown condition slot `{0}`")]
    UnknownCondition(String),

    #[error("condition layout mismatch: checkpoint has {expected:#018x}, caller has {got:#018x}")]
    LayoutMismatch { expected: u64, got: u64 },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("training diverged at step {step} (lr {lr}, grad norm {grad_norm}): {detail}")]
    Diverged {
        step: usize,
        lr: f64,
        grad_norm: f64,
        detail: String,
    },

    #[error("sampling produced non-finite values at diffusion step {step}")]
    SamplingFailed { step: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
