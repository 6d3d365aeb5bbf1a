use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are grouped by the CLI exit code they map to; see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // ---- data errors ----
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("dimension mismatch at line {line}: expected {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("class `{0}` listed more than once")]
    DuplicateClass(String),
    #[error("duplicate instance id `{0}`")]
    DuplicateInstance(String),
    #[error("class `{0}` has an all-zero embedding")]
    ZeroEmbedding(String),
    #[error("class `{0}` appears in both seen and unseen sets")]
    OverlappingSplit(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("split side `{0}` is empty")]
    EmptySide(&'static str),
    #[error("no training instances carry a seen label")]
    NoSeenInstances,
    #[error("embedding tables disagree on their class sets")]
    ClassSetMismatch,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("split identifiers differ between result files: {0}")]
    SplitMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("report parse error: {0}")]
    Report(String),

    // ---- numeric errors ----
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),
    #[error("too few points: {points} points for k = {k}")]
    TooFewPoints { points: usize, k: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("neighbor set is empty")]
    EmptyNeighborSet,
    #[error("zero vector: cosine similarity undefined")]
    ZeroVector,
    #[error("the unseen candidate set is empty")]
    EmptyUnseenSet,
    #[error("non-finite loss during {phase} (tensor `{tensor}`)")]
    NonFiniteLoss { phase: &'static str, tensor: String },
    #[error("phase `{requested}` requires `{missing}` to have run first")]
    PhaseOrder {
        requested: &'static str,
        missing: &'static str,
    },
    #[error("differences have zero variance; t statistic undefined")]
    ZeroVariance,
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 3 for data/IO problems, 4 for numeric failures.
    /// Usage errors (exit 2) are produced by the argument parser.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ShapeMismatch(_)
            | Error::InvalidProbability(_)
            | Error::TooFewPoints { .. }
            | Error::EmptyInput(_)
            | Error::OutOfRange(_)
            | Error::EmptyNeighborSet
            | Error::ZeroVector
            | Error::EmptyUnseenSet
            | Error::NonFiniteLoss { .. }
            | Error::PhaseOrder { .. }
            | Error::ZeroVariance
            | Error::TooFewSamples { .. } => 4,
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
