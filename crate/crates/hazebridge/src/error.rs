use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },

    #[error("group normalization: {channels} channels not divisible into {groups} groups")]
    InvalidGroupCount { channels: usize, groups: usize },

    #[error("timestep {t} outside valid range [{lo}, {hi}]")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },

    #[error("invalid schedule parameters: {0}")]
    InvalidSchedule(String),

    #[error("invalid sampler configuration: {0}")]
    InvalidSampler(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("non-finite gradient for parameter `{name}`; step aborted")]
    NonFiniteGradient { name: String },

    #[error("parameter `{0}` not found")]
    MissingParameter(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("invalid haze parameters: {0}")]
    InvalidHaze(String),

    #[error("invalid dataset request: {0}")]
    InvalidDataset(String),

    #[error("patch size {patch} exceeds image size {height}x{width}")]
    PatchTooLarge {
        patch: usize,
        height: usize,
        width: usize,
    },

    #[error("image {height}x{width} smaller than the {window}x{window} filter window")]
    ImageTooSmall {
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("checkpoint incompatible with configuration: {0}")]
    CheckpointMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category tag used by the CLI to pick exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::CheckpointMismatch(_) | Error::MissingParameter(_) => "checkpoint",
            Error::NonFinite { .. } | Error::NonFiniteGradient { .. } => "numeric",
            _ => "invalid-input",
        }
    }
}
