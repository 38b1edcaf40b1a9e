use thiserror::Error;

#[derive(Debug, Error)]
pub enum TamError {
    #[error("config error: {0}")]
    Config(String),

    /// An artifact was derived from inputs other than the ones supplied.
    #[error("provenance error: {0}")]
    Provenance(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error(transparent)]
    Grad(#[from] gradcore::GradError),
}

pub type Result<T, E = TamError> = std::result::Result<T, E>;

impl TamError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        TamError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn format(what: impl Into<String>, detail: impl ToString) -> Self {
        TamError::Format {
            what: what.into(),
            detail: detail.to_string(),
        }
    }
}
