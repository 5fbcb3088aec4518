use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sample rejected: {empty_fraction:.3} of composite bins are empty")]
    Rejected { empty_fraction: f64 },

    #[error("insufficient data: need at least {needed} observations, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("singular least-squares fit")]
    SingularFit,

    #[error("non-physical reflectance: {0}")]
    NonPhysical(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unsupported checkpoint format or version")]
    CheckpointVersion,

    #[error("truncated checkpoint payload")]
    CheckpointTruncated,

    #[error("malformed checkpoint manifest: {0}")]
    CheckpointManifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short identifier, used for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::UnknownLabel(_) => "unknown_label",
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Rejected { .. } => "rejected",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::SingularFit => "singular_fit",
            Error::NonPhysical(_) => "non_physical",
            Error::Shape(_) => "shape",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::CheckpointVersion => "checkpoint_version",
            Error::CheckpointTruncated => "checkpoint_truncated",
            Error::CheckpointManifest(_) => "checkpoint_manifest",
            Error::Json(_) => "json",
        }
    }
}
