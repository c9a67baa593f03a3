use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Shape(String),
    #[error("{0}")]
    InsufficientData(String),
    #[error("{0}")]
    DegenerateDesign(String),
    #[error("{0}")]
    MissingCalibration(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable token used as the prefix of machine-parsable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "DOMAIN_ERROR",
            Error::Shape(_) => "SHAPE_ERROR",
            Error::InsufficientData(_) => "INSUFFICIENT_DATA",
            Error::DegenerateDesign(_) => "DEGENERATE_DESIGN",
            Error::MissingCalibration(_) => "MISSING_CALIBRATION",
            Error::Config(_) => "CONFIG_ERROR",
            Error::Format(_) => "BAD_FORMAT",
            Error::Checkpoint(_) => "BAD_CHECKPOINT",
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => "FILE_NOT_FOUND",
            Error::Io(_) => "IO_ERROR",
            Error::Json(_) => "BAD_FORMAT",
        }
    }

    /// Whether the failure is caused by user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            _ => true,
        }
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
