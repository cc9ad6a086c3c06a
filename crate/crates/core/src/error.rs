use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("name already in use: {0}")]
    NameConflict(String),

    #[error("validation failed: {0}")]
    Validation(String),

    /// The push target exists but is not accepting messages.
    #[error("collection {0} is paused")]
    Paused(String),

    /// Payload rejected at the gateway; nothing was stored.
    #[error("message rejected: {0}")]
    Rejected(String),

    #[error("task {0} is no longer open")]
    TaskClosed(String),

    #[error("labeler {labeler} already voted on task {task}")]
    DuplicateVote { task: String, labeler: String },

    #[error("cannot train: {0}")]
    CannotTrain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("feature vector built against vocabulary v{vector}, model uses v{model}")]
    StaleVector { vector: u64, model: u64 },

    #[error("AUC undefined: scores contain only one class")]
    UndefinedAuc,

    #[error("information gain undefined on an empty set")]
    EmptyLabelSet,

    /// An error reported by a remote service instance.
    #[error("service returned {status} ({code}): {message}")]
    Remote {
        status: u16,
        code: String,
        message: String,
    },

    #[error("stored data is corrupt: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound {
            kind,
            id: id.into(),
        }
    }

    /// Short machine-readable code, used by the HTTP layer and CLI error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotFound { .. } => "not_found",
            Error::NameConflict(_) => "name_conflict",
            Error::Validation(_) => "validation",
            Error::Paused(_) => "paused",
            Error::Rejected(_) => "rejected",
            Error::TaskClosed(_) => "task_closed",
            Error::DuplicateVote { .. } => "duplicate_vote",
            Error::CannotTrain(_) => "cannot_train",
            Error::InsufficientData(_) => "insufficient_data",
            Error::StaleVector { .. } => "stale_vector",
            Error::UndefinedAuc => "undefined_auc",
            Error::EmptyLabelSet => "empty_label_set",
            Error::Remote { .. } => "remote",
            Error::Corrupt(_) => "corrupt",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
