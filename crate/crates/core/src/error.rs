use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid object spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("stale activation cache: parameters changed since the forward pass")]
    StaleCache,

    #[error("degenerate box {0:?}")]
    DegenerateBox(crate::image::BBox),

    #[error("negative queue is empty")]
    EmptyQueue,

    #[error("embedding row {row} is not unit norm (norm = {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("unknown transformation `{0}`")]
    UnknownTransformation(String),

    #[error("unknown regime `{0}`")]
    UnknownRegime(String),

    #[error("placement capacity exceeded: {requested} objects requested, at most {capacity} fit")]
    PlacementCapacity { requested: usize, capacity: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid track query: {0}")]
    InvalidTrack(String),

    #[error("missing tracks for regime {0}")]
    MissingTracks(String),

    #[error("top-k of {k} exceeds the {available} usable units{}", class.map(|c| format!(" for class {c}")).unwrap_or_default())]
    TopKTooLarge {
        k: usize,
        available: usize,
        class: Option<usize>,
    },

    #[error("class {0} has no samples")]
    MissingClass(usize),

    #[error("unmatched training budgets: {0}")]
    UnmatchedBudget(String),

    #[error("digest mismatch in stage `{stage}` for {path}")]
    DigestMismatch { stage: String, path: PathBuf },

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<LabError>,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}
