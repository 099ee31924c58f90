use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid or inconsistent configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a documented precondition.
    #[error("data error: {0}")]
    Data(String),

    /// Mismatched tensor or sequence shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// No alignment path of the requested kind exists (e.g. CTC output too short).
    #[error("infeasible alignment: {0}")]
    Infeasible(String),

    /// An exhaustive oracle would exceed its enumeration budget.
    #[error("oracle budget exceeded: {0}")]
    Budget(String),

    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(origin: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { origin: origin.into(), message: message.into() }
    }
}
