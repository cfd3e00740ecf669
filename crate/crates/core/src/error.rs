use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("inference failure: {0}")]
    Inference(String),

    #[error("model selection failure: {0}")]
    Selection(String),

    #[error("simulation failure: {0}")]
    Simulation(String),

    #[error("experiment failure: {0}")]
    Experiment(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    /// Stable machine-readable tag, used in CLI error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Solver(_) => "solver",
            Error::Inference(_) => "inference",
            Error::Selection(_) => "selection",
            Error::Simulation(_) => "simulation",
            Error::Experiment(_) => "experiment",
            Error::Serialization(_) => "serialization",
        }
    }

    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Solver(_)
                | Error::Inference(_)
                | Error::Selection(_)
                | Error::Simulation(_)
                | Error::Experiment(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Serialization(format!("{other:?}")),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Serialization(e.to_string())
        }
    }
}

pub(crate) fn shape_check(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: expected {expected}, got {got}")))
    }
}
