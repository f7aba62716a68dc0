use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    NodeShape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("leaf {leaf} ({name}) is not bound")]
    UnboundLeaf { leaf: usize, name: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-binary mask value {value} at index {index}")]
    NonBinary { index: usize, value: f64 },
    #[error("box {0:?} out of bounds for {1}x{2} image")]
    BoxOutOfBounds([usize; 4], usize, usize),
    #[error("not a PGM file (magic {0:?})")]
    PgmMagic(String),
    #[error("unsupported PGM variant {0:?}")]
    PgmVariant(String),
    #[error("malformed PGM header: {0}")]
    PgmHeader(String),
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    PgmTruncated { expected: usize, found: usize },
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    Divergence { epoch: usize, what: String },
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable identifier for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NodeShape { .. } | Error::Shape(_) => "shape_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::UnboundLeaf { .. } => "unbound_leaf",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonBinary { .. } => "non_binary",
            Error::BoxOutOfBounds(..) => "box_out_of_bounds",
            Error::PgmMagic(_) => "pgm_magic",
            Error::PgmVariant(_) => "pgm_variant",
            Error::PgmHeader(_) => "pgm_header",
            Error::PgmTruncated { .. } => "pgm_truncated",
            Error::Checkpoint(_) => "checkpoint",
            Error::Dataset(_) => "dataset",
            Error::Divergence { .. } => "divergence",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
