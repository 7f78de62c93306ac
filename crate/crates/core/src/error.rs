use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty mesh")]
    EmptyMesh,

    #[error("empty target cloud")]
    EmptyTargetCloud,

    #[error("empty primitive set")]
    EmptyPrimitiveSet,

    #[error("empty feature bank")]
    EmptyBank,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite objective")]
    NonFiniteObjective,

    #[error("numerical blowup in {0}")]
    NumericalBlowup(&'static str),

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        /// Weights from the last epoch whose loss was finite.
        last_good: Box<crate::seqgen::ModelWeights>,
    },

    #[error("degenerate normalization statistics: {0}")]
    DegenerateStats(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mesh has no face labels")]
    Unlabeled,

    #[error("parse error in {path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyMesh => "empty_mesh",
            Error::EmptyTargetCloud => "empty_target_cloud",
            Error::EmptyPrimitiveSet => "empty_primitive_set",
            Error::EmptyBank => "empty_bank",
            Error::EmptyDataset => "empty_dataset",
            Error::NonFiniteObjective => "non_finite_objective",
            Error::NumericalBlowup(_) => "numerical_blowup",
            Error::Diverged { .. } => "diverged",
            Error::DegenerateStats(_) => "degenerate_stats",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Unlabeled => "unlabeled",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
