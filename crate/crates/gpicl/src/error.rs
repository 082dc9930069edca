use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes do not conform for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A forward op or optimizer step produced or received a non-finite value.
    #[error("numerics error: {0}")]
    Numerics(String),

    /// A dataset file is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A configuration is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A loss was requested over zero masked positions.
    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: config errors exit 2, numerics errors 3,
    /// everything else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format(_) | Error::Shape(_) | Error::EmptyBatch(_) => 2,
            Error::Numerics(_) => 3,
            Error::Io(_) => 1,
        }
    }
}
