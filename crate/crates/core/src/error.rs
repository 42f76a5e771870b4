use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure a platform operation can report.
///
/// Variants map one-to-one onto stable string codes (see [`Error::code`]),
/// which the HTTP layer and the C ABI expose to callers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate case id `{0}`")]
    DuplicateCaseId(String),
    #[error("gold label `{code}` of case `{case_id}` is not in the task label space")]
    UnknownLabel { case_id: String, code: String },
    #[error("dataset has no cases")]
    EmptyDataset,
    #[error("test fraction {0} is outside the open interval (0, 1)")]
    FractionOutOfRange(String),
    #[error("manifest does not belong to dataset `{0}`")]
    ManifestMismatch(String),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("model package not found: {0}")]
    ModelNotFound(String),
    #[error("submission `{0}` is not eligible")]
    NotEligible(String),
    #[error("duplicate submission `{0}`")]
    DuplicateSubmission(String),
    #[error("model could not be started: {0}")]
    SpawnFailed(String),
    #[error("no gold label for case `{0}`")]
    MissingGold(String),
    #[error("runs are not comparable: {0}")]
    RunMismatch(String),
    #[error("report belongs to task `{found}`, expected `{expected}`")]
    TaskMismatch { expected: String, found: String },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },
    #[error("corrupt event log: {0}")]
    CorruptLog(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound {
            kind,
            id: id.into(),
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DuplicateCaseId(_) => "DUPLICATE_CASE_ID",
            Error::UnknownLabel { .. } => "UNKNOWN_LABEL",
            Error::EmptyDataset => "EMPTY_DATASET",
            Error::FractionOutOfRange(_) => "FRACTION_OUT_OF_RANGE",
            Error::ManifestMismatch(_) => "MANIFEST_MISMATCH",
            Error::Unauthorized(_) => "UNAUTHORIZED",
            Error::ModelNotFound(_) => "MODEL_NOT_FOUND",
            Error::NotEligible(_) => "NOT_ELIGIBLE",
            Error::DuplicateSubmission(_) => "DUPLICATE_SUBMISSION",
            Error::SpawnFailed(_) => "SPAWN_FAILED",
            Error::MissingGold(_) => "MISSING_GOLD",
            Error::RunMismatch(_) => "RUN_MISMATCH",
            Error::TaskMismatch { .. } => "TASK_MISMATCH",
            Error::UnknownTask(_) => "UNKNOWN_TASK",
            Error::NotFound { .. } => "NOT_FOUND",
            Error::CorruptLog(_) => "CORRUPT_LOG",
            Error::Invalid(_) => "INVALID",
            Error::Io(_) => "IO",
            Error::Json(_) => "INVALID_JSON",
        }
    }
}
