use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("degenerate embedding")]
    DegenerateEmbedding,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid attribute vector: {0}")]
    InvalidAttributes(String),

    #[error("{msg} at line {line}")]
    Parse { line: usize, msg: String },

    #[error("duplicate identity {0}")]
    DuplicateIdentity(u32),

    #[error("unassigned track id in output for frame {0}")]
    UnassignedId(u32),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("fusion parameters required for attribute predictions but none were given")]
    MissingFusionParams,

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("label {label} out of range for {classes} identity classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("insufficient negatives: far {far} needs at least {needed} negative pairs, have {have}")]
    InsufficientNegatives { far: f64, needed: usize, have: usize },

    #[error("no ground-truth boxes: {0}")]
    NoGroundTruth(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },

    #[error("variant {variant} (seed {seed}) failed: {source}")]
    Run {
        variant: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attaches a file path to a parse error coming out of a stream reader.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Io { .. } | Error::File { .. } => self,
            other => Error::File { path: path.into(), msg: other.to_string() },
        }
    }
}
