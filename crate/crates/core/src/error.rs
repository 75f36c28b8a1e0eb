use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("class directory for {class} not found under {root} (looked for: {candidates})")]
    MissingClassDir {
        class: String,
        root: PathBuf,
        candidates: String,
    },

    #[error("class directory {dir} contains no PNG images")]
    EmptyClass { dir: PathBuf },

    #[error("failed to read image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("cannot build {k} folds: class {class} has only {count} items")]
    TooFewForFolds { k: usize, class: String, count: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown backbone {name:?}; supported: {supported}")]
    UnknownBackbone { name: String, supported: String },

    #[error("pretrained weights for {backbone} not found at {path}. {hint}")]
    MissingWeights {
        backbone: String,
        path: PathBuf,
        hint: String,
    },

    #[error("anchor {anchor:?} not found in {backbone}; candidate layers: {candidates}")]
    AnchorNotFound {
        backbone: String,
        anchor: String,
        candidates: String,
    },

    #[error("branch {branch} produces {found:?} spatial maps, expected {expected:?}")]
    SpatialMismatch {
        branch: String,
        found: (usize, usize),
        expected: (usize, usize),
    },

    #[error("layer {layer:?} not found; candidates: {candidates}")]
    UnknownLayer { layer: String, candidates: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}")]
    Divergence { epoch: usize, iteration: usize },

    #[error("invalid label {0}; expected 0, 1 or 2")]
    InvalidLabel(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn image(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Image {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
