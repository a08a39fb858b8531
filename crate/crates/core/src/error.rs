use thiserror::Error;

/// Errors surfaced by the toolkit.
///
/// Variants fall in three families that the command-line driver maps onto
/// distinct exit codes: configuration/precondition problems, numerical
/// failures and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("value {value} outside tabulated range [0, {max}]")]
    OutOfRange { value: f64, max: f64 },

    #[error("invalid medium model: {0}")]
    InvalidModel(String),

    #[error("numerical failure in {context}: {detail}")]
    NumericalFailure { context: String, detail: String },

    #[error("unavailable: {0}")]
    Unavailable(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericalFailure {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than numerics or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGrid(_)
                | Error::GridMismatch(_)
                | Error::Precondition(_)
                | Error::Configuration(_)
                | Error::OutOfRange { .. }
                | Error::InvalidModel(_)
                | Error::Unavailable(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
