use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric argument outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A caller broke an interface contract (shape mismatch, wrong catalog).
    #[error("contract error: {0}")]
    Contract(String),

    /// A configuration file that does not match its schema.
    #[error("{path}: invalid config at `{json_path}`: {message}")]
    Schema {
        path: PathBuf,
        json_path: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Malformed content in an input file.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// Numerical failure inside an iterative solver.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A pipeline stage failed.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
