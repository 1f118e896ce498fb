use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("inconsistent width at row {row}: expected {expected} columns, found {found}")]
    InconsistentWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("no rows")]
    NoRows,
    #[error("bad magic: expected \"CVXA\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("dataset has no labels")]
    MissingLabels,
    #[error("label {label} at row {row} is outside [0, {classes})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("gate sets differ between per-class solutions")]
    GateSetMismatch,
    #[error("gate set is empty")]
    EmptyGateSet,
    #[error("student has no hidden units")]
    EmptyStudent,
    #[error("exhaustive enumeration requires n <= {max_n} and d <= {max_d} (got n={n}, d={d})")]
    GuardViolation {
        n: usize,
        d: usize,
        max_n: usize,
        max_d: usize,
    },
    #[error("inconsistent parameter counts: {0}")]
    InconsistentCounts(String),
    #[error("training diverged (non-finite loss) at iteration {iter}")]
    Divergence { iter: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
