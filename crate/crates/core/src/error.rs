use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: header implies {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid resolution ratio: {0}")]
    Ratio(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate reference: {0}")]
    DegenerateReference(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("forward state does not match: {0}")]
    StaleState(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case tag for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::Data(_) => "data",
            Error::Dimension(_) => "dimension",
            Error::Ratio(_) => "ratio",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DegenerateReference(_) => "degenerate_reference",
            Error::NonFinite(_) => "non_finite",
            Error::Undefined(_) => "undefined",
            Error::StaleState(_) => "stale_state",
            Error::Json(_) => "json",
        }
    }

    /// True for errors caused by caller-supplied inputs rather than internal failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::NonFinite(_) | Error::StaleState(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
