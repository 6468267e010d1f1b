use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    /// `line` is 1-based; 0 marks a value that did not come from a file line.
    #[error("{}", config_message(*line, field, message))]
    Config {
        line: usize,
        field: String,
        message: String,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn config_message(line: usize, field: &str, message: &str) -> String {
    if line == 0 {
        format!("config field `{field}`: {message}")
    } else {
        format!("config line {line}, field `{field}`: {message}")
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
