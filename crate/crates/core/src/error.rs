use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used for process exit codes and HTTP status mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm joint embedding{}", id.as_deref().map(|i| format!(" for sample {i:?}")).unwrap_or_default())]
    ZeroVector { id: Option<String> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("invalid sample id: {0}")]
    InvalidId(String),

    #[error("non-finite component in sample {0:?}")]
    NonFinite(String),

    #[error("no samples given")]
    Empty,

    #[error("bad magic bytes, not an embedding cache")]
    BadMagic,

    #[error("unsupported cache version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated or oversized file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },

    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },

    #[error("k = {k} exceeds sample count {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("cluster {0} has no members")]
    EmptyCluster(usize),

    #[error("non-finite logit")]
    NonFiniteLogit,

    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("core set is empty")]
    EmptyCoreSet,

    #[error("class {0} has no training samples")]
    MissingClass(usize),

    #[error("selection ratio {0} outside (0, 1]")]
    BadRatio(f64),

    #[error("{} manifest id(s) missing from source dataset: {}", .0.len(), .0.join(", "))]
    MissingId(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Stage { source, .. } => source.class(),
            Error::Config(_) | Error::BadRatio(_) | Error::KTooLarge { .. } => ErrorClass::Config,
            Error::NonFiniteLogit | Error::ZeroVector { .. } | Error::NonFinite(_) => {
                ErrorClass::Numeric
            }
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroVector { .. } => "zero_vector",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DuplicateId(_) => "duplicate_id",
            Error::InvalidId(_) => "invalid_id",
            Error::NonFinite(_) => "non_finite",
            Error::Empty => "empty",
            Error::BadMagic => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::TruncatedFile { .. } => "truncated_file",
            Error::Malformed { .. } => "malformed",
            Error::KTooLarge { .. } => "k_too_large",
            Error::EmptyCluster(_) => "empty_cluster",
            Error::NonFiniteLogit => "non_finite_logit",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::EmptyCoreSet => "empty_core_set",
            Error::MissingClass(_) => "missing_class",
            Error::BadRatio(_) => "bad_ratio",
            Error::MissingId(_) => "missing_id",
            Error::Config(_) => "config",
            Error::Stage { source, .. } => source.kind(),
            Error::Io { .. } => "io_failure",
            Error::Json(_) => "json",
        }
    }
}
