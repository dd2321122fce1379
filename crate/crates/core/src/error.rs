use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("invalid calibration: {0}")]
    Calibration(String),
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input mismatch: {0}")]
    Mismatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss in stage {stage} at iteration {iteration}: {term} = {value}")]
    NonFiniteLoss {
        stage: String,
        iteration: usize,
        term: String,
        value: f64,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
