use thiserror::Error;

/// Errors produced by every stage of the stylization stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Index(_) => 2,
            Error::Io { .. } | Error::Format(_) => 3,
            Error::Numerical(_) | Error::InvalidTensor(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
