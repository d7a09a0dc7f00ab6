use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the error contracts of the
/// public operations: invalid arguments, missing files, malformed inputs,
/// checkpoint versioning and non-finite training losses.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {}", path.display())]
    NotFound { path: PathBuf },

    #[error("parse error at {}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error on {}: {message}", path.display())]
    ImageDecode { path: PathBuf, message: String },

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("non-finite loss in term `{term}` at iteration {iteration}")]
    NonFiniteLoss { term: String, iteration: u64 },

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
