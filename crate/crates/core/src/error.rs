use thiserror::Error;

/// Errors raised across the library.
///
/// `Usage`-style problems (bad files, unknown references) and domain problems
/// (infeasible parameters) are kept apart so the CLI can map them to distinct
/// exit codes.
#[derive(Debug, Error)]
pub enum SdcError {
    #[error("schema violation at {location}: {message}")]
    Schema { location: String, message: String },

    #[error("unknown breakdown '{id}' referenced at {location}")]
    UnknownBreakdown { id: String, location: String },

    #[error("duplicate id '{id}' at {location}")]
    DuplicateId { id: String, location: String },

    #[error("invalid category '{value}' for breakdown '{breakdown}' at {location}")]
    InvalidCategory {
        breakdown: String,
        value: String,
        location: String,
    },

    #[error("record not present in database")]
    RecordNotFound,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible variance {variance} for bound {bound}: maximum is {max}")]
    InfeasibleVariance { variance: f64, bound: u32, max: f64 },

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("statistic {0} is not contained in any table")]
    NoRepresentation(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SdcError {
    /// Whether the error stems from malformed input rather than from a
    /// well-formed request that is infeasible in the domain.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            SdcError::Schema { .. }
                | SdcError::UnknownBreakdown { .. }
                | SdcError::DuplicateId { .. }
                | SdcError::InvalidCategory { .. }
                | SdcError::Io(_)
                | SdcError::Csv(_)
                | SdcError::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SdcError>;
