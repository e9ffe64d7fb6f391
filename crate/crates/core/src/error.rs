use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An index or window (day, pilot length, horizon) falls outside the data.
    #[error("{what} out of range: {detail}")]
    Range { what: &'static str, detail: String },

    /// A numeric argument lies outside the domain of a function.
    #[error("domain error in {func}: {detail}")]
    Domain { func: &'static str, detail: String },

    /// Inconsistent or invalid configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The data cannot identify the requested fit.
    #[error("cannot fit hyperparameters: {0}")]
    Unfit(String),

    /// The optimizer could not find a single finite starting point.
    #[error("optimizer initialization failed: {0}")]
    Init(String),

    /// Malformed input file.
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(func: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            func,
            detail: detail.into(),
        }
    }

    pub(crate) fn range(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Range {
            what,
            detail: detail.into(),
        }
    }
}
