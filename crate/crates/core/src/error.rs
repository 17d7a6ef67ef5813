use thiserror::Error;

/// Errors raised by the estimators and their plumbing.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A kernel-weighted denominator fell below its floor.
    #[error("insufficient local data at {what}: kernel mass {mass:.4} below floor {floor:.4}")]
    InsufficientLocalData {
        what: String,
        mass: f64,
        floor: f64,
    },

    #[error("singular matrix: smallest pivot {pivot:e} vs largest {largest:e}")]
    SingularMatrix { pivot: f64, largest: f64 },

    /// A variance or weighting matrix could not be inverted; the moment system
    /// is (near) rank deficient at the conditioning points in use.
    #[error("weak identification: {0}")]
    WeakIdentification(String),

    #[error("trimmed support is empty: [{low}, {high}]")]
    EmptyTrimmedSupport { low: f64, high: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error at row {row}, column {column}: {message}")]
    Schema {
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Variant name, used to tally failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InsufficientLocalData { .. } => "insufficient_local_data",
            Error::SingularMatrix { .. } => "singular_matrix",
            Error::WeakIdentification(_) => "weak_identification",
            Error::EmptyTrimmedSupport { .. } => "empty_trimmed_support",
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Schema { .. } => "schema",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    /// True for errors that come from the data or the estimation itself,
    /// as opposed to bad input or configuration.
    pub fn is_estimation_error(&self) -> bool {
        matches!(
            self,
            Error::InsufficientLocalData { .. }
                | Error::SingularMatrix { .. }
                | Error::WeakIdentification(_)
                | Error::EmptyTrimmedSupport { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
