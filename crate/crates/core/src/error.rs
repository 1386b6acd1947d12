use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("unknown regime index {0}")]
    UnknownRegime(usize),

    #[error("signal {value} is outside the domain of {law}")]
    OutOfDomain { value: f64, law: String },

    #[error("observation at step {step} has zero likelihood under every regime")]
    ImpossibleObservation { step: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("chain structure: {0}")]
    Reducible(String),

    #[error("all {restarts} EM restarts failed; last error: {last}")]
    FitFailed { restarts: usize, last: String },

    #[error("{}", match .row { Some(r) => format!("data error at row {r}: {}", .message), None => format!("data error: {}", .message) })]
    Data { row: Option<usize>, message: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn data(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Data {
            row,
            message: msg.into(),
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Dimension { .. }
            | Error::InvalidParameter(_)
            | Error::UnknownRegime(_)
            | Error::OutOfDomain { .. }
            | Error::Data { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::Singular(_)
            | Error::ImpossibleObservation { .. }
            | Error::NonFinite(_)
            | Error::Reducible(_)
            | Error::FitFailed { .. } => 3,
        }
    }
}
