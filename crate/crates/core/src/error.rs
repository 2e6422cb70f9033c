use std::path::PathBuf;

use crate::space::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("vector has zero norm")]
    ZeroNormVector,

    #[error("matrix entry {index} is not finite")]
    NonFinite { index: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("validation failed with {} violation(s): {}", .0.len(), summarize(.0))]
    ValidationFailed(Vec<Violation>),

    #[error("anchor pool too small: requested {requested}, pool has {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("anchor `{0}` has no embedding in the source space")]
    MissingAnchorEmbedding(String),

    #[error("spaces are projected on different anchor sets")]
    AnchorMismatch,

    #[error("conflicting labels for sample(s): {}", summarize_conflicts(.0))]
    LabelConflict(Vec<(String, Vec<u32>)>),

    #[error("need at least two rows")]
    TooFewRows,

    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("space is degenerate (self-HSIC below threshold)")]
    DegenerateSpace,

    #[error("class {0} has no samples")]
    EmptyClass(u32),

    #[error("both classes collapse to the same point")]
    ZeroOverZero,

    #[error("no class pairs left to summarize")]
    NoPairs,

    #[error("training data contains a single class")]
    SingleClass,

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("sample ids are required for id-based subsets")]
    MissingSampleIds,

    #[error("(C - S) = {remaining} is not divisible by N = {novel}")]
    NotDivisible { remaining: usize, novel: usize },

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("class count {0} is odd")]
    OddClassCount(usize),

    #[error("class {class} has too few samples: {reason}")]
    InsufficientSamples { class: u32, reason: String },

    #[error("unknown sample id `{0}`")]
    UnknownSampleId(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    #[error("CSV parse error at row {row}, column {column}: {message}")]
    Csv { row: usize, column: usize, message: String },

    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Strips any stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Name of the outermost pipeline stage, if annotated.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage { stage, source: Box::new(e) })
    }
}

fn summarize(violations: &[Violation]) -> String {
    let mut parts: Vec<String> = violations.iter().take(3).map(|v| v.to_string()).collect();
    if violations.len() > 3 {
        parts.push("...".into());
    }
    parts.join("; ")
}

fn summarize_conflicts(conflicts: &[(String, Vec<u32>)]) -> String {
    conflicts
        .iter()
        .take(3)
        .map(|(id, labels)| format!("{id} {labels:?}"))
        .collect::<Vec<_>>()
        .join(", ")
}
