use thiserror::Error;

/// Errors raised by the selection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {index} has zero norm and cannot be normalized")]
    ZeroRow { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("validation set has no subtask columns")]
    EmptySubtask,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("empty input list")]
    EmptyList,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("k = {k} exceeds the number of samples ({n})")]
    KTooLarge { k: usize, n: usize },

    #[error("input matrix must be row-normalized")]
    NotNormalized,

    #[error("budget {budget} exceeds pool size {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },

    #[error("no reward history available")]
    EmptyHistory,

    #[error("ground-truth set is empty")]
    EmptyGroundTruth,

    #[error("ground-truth influence sum is zero")]
    ZeroDenominator,

    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    #[error("sample ids do not match the reference ids")]
    IdMismatch,

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed gradient file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by unreadable or unwritable files rather than bad values.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
