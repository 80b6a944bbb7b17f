use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid corpus: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("invalid regular expression in `{name}`: {source}")]
    Regex {
        name: String,
        #[source]
        source: regex::Error,
    },

    #[error("cannot render `{surface}` as {label}: {message}")]
    Render {
        surface: String,
        label: String,
        message: String,
    },

    #[error("classifier: {0}")]
    Classifier(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn read_to_string(path: impl AsRef<std::path::Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
