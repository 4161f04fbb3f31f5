use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Every variant maps onto a stable, machine-parsable category via
/// [`Error::category`], which the command-line front end prints on failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid selection: {0}")]
    InvalidSelection(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),

    #[error("infeasible sample: {0}")]
    InfeasibleSample(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("{path}:{line}: {msg}")]
    Ingestion {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidSelection(_) => "invalid-selection",
            Error::SchemaMismatch(_) => "schema-mismatch",
            Error::EmptyInput(_) => "empty-input",
            Error::Shape(_) => "shape",
            Error::Parameter(_) => "parameter",
            Error::DegenerateTraining(_) => "degenerate-training",
            Error::InfeasibleSample(_) => "infeasible-sample",
            Error::Undefined(_) => "undefined",
            Error::Evaluation(_) => "evaluation",
            Error::Ingestion { .. } => "ingestion",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn ingest(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
