use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // embedding file format
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: {0}")]
    TruncatedHeader(String),
    #[error("truncated payload in record {record}")]
    TruncatedRecord { record: usize },
    #[error("{trailing} trailing bytes after the last record")]
    TrailingBytes { trailing: usize },
    #[error("record {record}: {field} has L2 norm {norm}, expected 1 +/- 1e-3")]
    NormViolation {
        record: usize,
        field: &'static str,
        norm: f64,
    },
    #[error("record {record}: invalid label {label} (expected 0, 1 or 255)")]
    InvalidLabel { record: usize, label: u8 },
    #[error("record {record}: invalid meta tag {tag}")]
    InvalidMetaTag { record: usize, tag: u8 },
    #[error("duplicate record id {0}")]
    DuplicateId(u64),
    #[error("record {record}: {field} has length {found}, dataset dim is {expected}")]
    DimMismatch {
        record: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },

    // numerics
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("example {index} is unlabeled (label 255)")]
    Unlabeled { index: usize },
    #[error("{which} row {row} has norm below 1e-8; cosine similarity undefined")]
    DegenerateVector { which: &'static str, row: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("AUROC undefined: labels contain a single class")]
    SingleClass,

    // model / checkpoints
    #[error("model has no gate: {0}")]
    NoGate(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint does not match the expected model: {0}")]
    ConfigMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
