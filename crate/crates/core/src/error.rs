use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A position falls outside the spatial domain `[0, L]`.
    #[error("position {position} km is outside the domain [0, {length_km}] km")]
    OutOfDomain { position: f64, length_km: f64 },

    /// A numerical procedure failed (factorization, non-convergence, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed input data (CSV structure, missing columns, ...).
    #[error("format error: {0}")]
    Format(String),

    /// A requested rate is undefined for this input (e.g. a success rate
    /// over zero true outliers).
    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    /// I/O failure while reading or writing an external file.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
