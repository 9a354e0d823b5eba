use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data. `row` is 1-based and counts the header.
    #[error("{file}: row {row}: {message}")]
    DataRow {
        file: String,
        row: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unsupported kernel family for {op}: {family}")]
    UnsupportedFamily { op: &'static str, family: String },

    /// Cholesky failed even after the maximum jitter.
    #[error("numerical conditioning failure: {0}")]
    Conditioning(String),

    /// A sampler block failed; carries the block name and the iteration index.
    #[error("sampler block `{block}` failed at iteration {iteration}: {source}")]
    Sweep {
        block: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),

    #[error("schema version {found} is newer than supported version {supported}")]
    SchemaVersion { found: u32, supported: u32 },

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Conditioning(_) => true,
            Error::Sweep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
