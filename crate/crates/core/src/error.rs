use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, DiscoError>;

#[derive(Debug, thiserror::Error)]
pub enum DiscoError {
    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("task {task} out of range 1..={num_tasks}")]
    TaskOutOfRange { task: usize, num_tasks: usize },

    #[error("source is missing {}", format_gaps(.0))]
    MissingData(Vec<(u32, String)>),

    #[error("manifest error at line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("unknown domain transform `{0}`")]
    UnknownTransform(String),

    #[error("transform `{transform}` cannot be applied: {message}")]
    Transform { transform: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector where cosine similarity is required")]
    ZeroVector,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label overlap with existing classifier head: {0:?}")]
    LabelOverlap(Vec<u32>),

    #[error("classifier has no row for class {0}")]
    MissingClass(u32),

    #[error("prototype pool: {0}")]
    Prototype(String),

    #[error("prompt pool: {0}")]
    PromptPool(String),

    #[error("embedding provider failed: {0}")]
    Embedding(String),

    #[error("invalid accuracy matrix: {0}")]
    InvalidMatrix(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("prediction {0} is outside every task label set")]
    PredictionOutsideTasks(u32),

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("training aborted at task {task}, epoch {epoch}, step {step}: {message}")]
    Training {
        task: usize,
        epoch: usize,
        step: usize,
        message: String,
    },

    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode failed for {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl DiscoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DiscoError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn artifact(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        DiscoError::Artifact {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Configuration problems are reported before any training starts and map
    /// to a distinct process exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, DiscoError::Config(_))
    }
}

fn format_gaps(gaps: &[(u32, String)]) -> String {
    let items: Vec<String> = gaps
        .iter()
        .map(|(label, domain)| format!("(label {label}, domain \"{domain}\")"))
        .collect();
    items.join(", ")
}
