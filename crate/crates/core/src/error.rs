use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, got {got}")]
    Dimension {
        axis: String,
        expected: usize,
        got: usize,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown label `{0}`")]
    Label(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("training aborted at epoch {epoch}, step {step}: {msg}")]
    TrainAbort {
        epoch: usize,
        step: usize,
        msg: String,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            axis: axis.into(),
            expected,
            got,
        }
    }
}
