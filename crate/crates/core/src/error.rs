use std::path::PathBuf;

/// Errors produced anywhere in the localization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite RSS value at AP index {index}")]
    NonFiniteValue { index: usize },

    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("line {line}, column {column}: RSS {value} outside [-100, 0] dBm")]
    RssOutOfRange { line: u64, column: String, value: f64 },

    #[error("unknown column `{0}` in dataset header")]
    UnknownColumn(String),

    #[error("invalid dataset header: {0}")]
    InvalidHeader(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("reference point {rp} has {available} fingerprints, split needs {needed}")]
    InsufficientFingerprints { rp: u32, available: usize, needed: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no negative candidate at a reference point other than {anchor_rp}")]
    NoNegativeCandidate { anchor_rp: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite activation in layer `{layer}`")]
    NonFiniteActivation { layer: String },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("non-finite feature at sample {sample}, feature {feature}")]
    NonFiniteFeature { sample: usize, feature: usize },

    #[error("unknown reference point {0}")]
    UnknownRp(u32),

    #[error("collection instance {0} missing from stream")]
    MissingCi(u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Innermost stage name, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
