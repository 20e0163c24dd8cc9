use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid tensor shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("node {0} does not belong to this graph")]
    ForeignNode(usize),

    #[error("node {0} is not a leaf")]
    NotALeaf(usize),

    #[error("{op}: index {index} out of range for {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("perturbation site {site}: expected shape {expected:?}, got {actual:?}")]
    PerturbationShape {
        site: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid scene parameters: {0}")]
    InvalidScene(String),

    #[error("invalid bias specification: {0}")]
    InvalidBias(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no tests to aggregate")]
    EmptyTests,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{path}: bad magic bytes {found:?}")]
    BadMagic { path: PathBuf, found: Vec<u8> },

    #[error("{path}: truncated while reading tensor {tensor}")]
    Truncated { path: PathBuf, tensor: String },

    #[error("{path}: shape table inconsistent with payload ({detail})")]
    ShapeTable { path: PathBuf, detail: String },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: missing tensor {name}")]
    MissingTensor { path: PathBuf, name: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
