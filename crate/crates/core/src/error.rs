use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in `{field}`: expected {expected}, found {found}")]
    ShapeMismatch {
        field: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in `{field}` at element {index}")]
    NonFinite { field: String, index: usize },

    #[error("missing file for `{field}`: {path}")]
    MissingFile { field: String, path: PathBuf },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("stage order: {0}")]
    StageOrder(String),

    #[error("config: {0}")]
    Config(String),

    #[error("no supervision: {0}")]
    NoSupervision(String),

    #[error("output already exists: {0} (pass --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Short kebab-case tag used in machine-parsable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::NonFinite { .. } => "non-finite",
            Error::MissingFile { .. } => "missing-file",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::StageOrder(_) => "stage-order",
            Error::Config(_) => "config",
            Error::NoSupervision(_) => "no-supervision",
            Error::OutputExists(_) => "output-exists",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    /// Process exit code for the CLI; one code per error family.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::StageOrder(_) => 3,
            Error::MissingFile { .. } | Error::Io { .. } => 4,
            Error::ShapeMismatch { .. } | Error::NonFinite { .. } | Error::Json { .. } => 5,
            Error::NonFiniteLoss { .. } => 6,
            Error::NoSupervision(_) => 7,
            Error::InvalidInput(_) => 8,
            Error::OutputExists(_) => 9,
        }
    }
}
