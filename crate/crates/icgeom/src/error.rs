//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("vertex index {index} out of range for {count} vertices")]
    IndexOutOfRange { index: i64, count: usize },

    #[error("mesh has no triangles")]
    EmptyMesh,

    #[error("input is empty")]
    EmptyInput,

    #[error("cloud already has {current} points, budget is {budget}; downsample instead")]
    UpsampleNotNeeded { current: usize, budget: usize },

    #[error("cloud has {current} points, cannot take a subset of {budget}")]
    NotEnoughPoints { current: usize, budget: usize },

    #[error("k = {k} exceeds point count {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("sample count {m} exceeds point count {n}")]
    SampleTooLarge { m: usize, n: usize },

    #[error("start index {start} out of range for {n} points")]
    StartOutOfRange { start: usize, n: usize },

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("class id {id} out of range for {classes} classes")]
    ClassOutOfRange { id: usize, classes: usize },

    #[error("prediction list has {predictions} entries but label list has {labels}")]
    LengthMismatch { predictions: usize, labels: usize },

    #[error("ROC is undefined without at least one positive and one negative sample")]
    RocSingleClass,

    #[error("unknown shape family {0:?}")]
    UnknownFamily(String),

    #[error("cloud is missing a class label")]
    MissingLabel,

    #[error("clouds have inconsistent sizes: expected {expected}, found {actual}")]
    InconsistentCloudSize { expected: usize, actual: usize },

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
