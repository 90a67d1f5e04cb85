use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed line: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unknown class_id {class_id} at line {line}")]
    UnknownClass { class_id: u32, line: usize },
    #[error("duplicate taxonomy id {0}")]
    DuplicateClass(u32),
    #[error("taxonomy is missing class id {0}")]
    MissingClass(u32),
    #[error("row-count mismatch: expected {expected}, found {found}")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("dimension mismatch at row {row}: expected {expected}, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("bandwidth bisection did not converge for row {0}")]
    BisectionDiverged(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid triplet ({anchor}, {positive}, {negative}) for N={n}")]
    InvalidTriplet {
        anchor: usize,
        positive: usize,
        negative: usize,
        n: usize,
    },
    #[error("non-finite loss or gradient at iteration {0}")]
    Diverged(usize),
    #[error("corpus too small for sampling: {0}")]
    PoolTooSmall(String),
    #[error("insufficient class members: {0}")]
    InsufficientMembers(String),
    #[error("k={k} exceeds n={n}")]
    KExceedsN { k: usize, n: usize },
    #[error("expected a catch grid")]
    NotCatch,
    #[error("expected {expected} pretest answers, got {got}")]
    AnswerCount { expected: usize, got: usize },
    #[error("no valid ground-truth triplet exists for these labels")]
    NoGroundTruth,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
