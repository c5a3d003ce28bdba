use std::path::PathBuf;

/// Errors produced by the spectrum feature-learning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input set: {0}")]
    EmptySet(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("features collapsed to a single point at epoch {epoch}")]
    DegenerateFeatures { epoch: usize },

    #[error("model holds {available} components, which explain only {explained:.6} of the variance (threshold {threshold})")]
    InsufficientModel {
        available: usize,
        explained: f64,
        threshold: f64,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: u32, classes: usize },

    #[error("silhouette needs at least two distinct clusters, found {0}")]
    SingleCluster(usize),

    #[error("cluster {0} has no members")]
    EmptyCluster(u32),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("training interrupted after {completed_epochs} completed epochs")]
    Interrupted { completed_epochs: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
