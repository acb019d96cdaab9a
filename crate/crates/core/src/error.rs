use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or settings that cannot describe a valid model or run.
    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs outside an operation's domain (empty logs, bad temperature, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value at iteration {iteration}: {what} = {value}")]
    NonFinite {
        iteration: u64,
        what: &'static str,
        value: f64,
    },

    #[error("checkpoint for iteration {0} already exists")]
    Conflict(u64),

    #[error("no checkpoint for iteration {0}")]
    NotFound(u64),

    #[error("malformed {what} (field `{field}`): {detail}")]
    Format {
        what: &'static str,
        field: &'static str,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
