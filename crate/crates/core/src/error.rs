use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("cannot decode audio: {0}")]
    Decode(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("input too short: need {needed}, got {got}")]
    TooShort { needed: String, got: String },

    #[error("invalid stretch factor {0} (must be finite and > 0)")]
    InvalidFactor(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("degenerate quad: {0}")]
    DegenerateQuad(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("search error: {0}")]
    Search(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 1 = usage/configuration, 2 = bad or missing data, 3 = internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. }
            | Error::Stream(_)
            | Error::Decode(_)
            | Error::EmptyInput(_)
            | Error::TooShort { .. }
            | Error::InvalidFactor(_)
            | Error::Data(_)
            | Error::Format(_)
            | Error::DegenerateQuad(_)
            | Error::Search(_)
            | Error::UndefinedMetric(_) => 2,
            Error::Shape(_) | Error::Contract(_) | Error::NonFinite(_) => 3,
        }
    }
}
