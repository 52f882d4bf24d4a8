use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure classes shared by every module; each maps to a stable exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("overlap violation: {0}")]
    Overlap(String),

    #[error("assumption violation: {0}")]
    Assumption(String),

    #[error("non-measurable design: {0}")]
    NonMeasurable(String),

    #[error("degenerate conditioning: {0}")]
    DegenerateConditioning(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("enumeration infeasible: support of {size} vectors exceeds cap {cap}")]
    EnumerationInfeasible { size: f64, cap: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("undefined estimate: {0}")]
    Undefined(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Structural(_) | Error::Schema(_) | Error::Io(_) => 2,
            Error::Integrity(_) | Error::InvalidData(_) => 3,
            Error::Overlap(_)
            | Error::Assumption(_)
            | Error::NonMeasurable(_)
            | Error::DegenerateConditioning(_)
            | Error::Unsupported(_) => 4,
            Error::EnumerationInfeasible { .. } | Error::Numerical(_) => 5,
            Error::Undefined(_) => 6,
        }
    }

    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Structural(_) => "structural",
            Error::Schema(_) => "schema",
            Error::Integrity(_) => "integrity",
            Error::InvalidData(_) => "invalid_data",
            Error::Overlap(_) => "overlap",
            Error::Assumption(_) => "assumption",
            Error::NonMeasurable(_) => "non_measurable",
            Error::DegenerateConditioning(_) => "degenerate_conditioning",
            Error::Unsupported(_) => "unsupported",
            Error::EnumerationInfeasible { .. } => "enumeration_infeasible",
            Error::Numerical(_) => "numerical",
            Error::Undefined(_) => "undefined_estimate",
            Error::Io(_) => "io",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Schema(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(e.to_string())
    }
}
