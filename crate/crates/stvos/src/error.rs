use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure categories the
/// operations advertise (shape violations, bad arguments, missing data, ...).
#[derive(Error, Debug)]
pub enum Error {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("empty sequence: {0}")]
    EmptySequence(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable one-word category used by the CLI for machine-parsable
    /// diagnostics and exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::NotFound(_) | Error::Data(_) | Error::EmptySequence(_) => "data",
            _ => "runtime",
        }
    }
}
