use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid NIfTI-1 data: {0}")]
    Format(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("{}:{line}: cannot parse {content:?}", .file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        content: String,
    },
    #[error("inconsistent inputs: {0}")]
    Consistency(String),
    #[error("invalid argument: {0}")]
    Validation(String),
    #[error("heuristic localization needs at least 2 frames, study has {0}")]
    InsufficientFrames(usize),
    #[error("need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("correlation undefined: one side of the series is constant")]
    UndefinedCorrelation,
    #[error("paired test undefined: differences have zero variance")]
    DegenerateTest,
    #[error("degenerate study: LV cavity volume is zero in every frame")]
    DegenerateStudy,
    #[error("non-finite value in {0}")]
    Numeric(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },
    #[error("unknown parameter file version {0}")]
    UnknownVersion(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
