use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for arithmetic failures (NaN, infinity, divergence) as opposed
    /// to bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::NonFinite(_))
    }
}
