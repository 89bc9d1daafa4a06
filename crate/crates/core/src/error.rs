use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MadsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MadsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error in {context}: {message}")]
    Schema { context: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("vocabulary error: id {id} out of range for table with {size} rows")]
    Vocabulary { id: usize, size: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("sequence of {len} tokens exceeds the maximum positional length {max}")]
    Length { len: usize, max: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("collection error: {0}")]
    Collection(String),

    #[error("no attribute view is common to all {responses} responses")]
    EmptyViews { responses: usize },

    #[error("could not parse LLM response: {message}\n--- raw response ---\n{raw}")]
    Parse { message: String, raw: String },

    #[error("enrichment left view {view:?} of {category:?} empty")]
    Enrichment { category: String, view: String },

    #[error("LLM client error: {0}")]
    Client(String),

    #[error("checkpoint incompatible: field `{field}` expected {expected}, found {found}")]
    Incompatible { field: String, expected: String, found: String },

    #[error("missing features for {} image(s): {}", .refs.len(), .refs.join(", "))]
    MissingFeatures { refs: Vec<String> },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<MadsError>,
    },
}

impl MadsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MadsError::Io { path: path.into(), source }
    }

    pub fn schema(context: impl Into<String>, message: impl ToString) -> Self {
        MadsError::Schema { context: context.into(), message: message.to_string() }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        MadsError::Context { context: context.into(), source: Box::new(self) }
    }

    /// Short machine-readable kind tag, used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            MadsError::Io { .. } => "io",
            MadsError::Schema { .. } => "schema",
            MadsError::Validation(_) => "validation",
            MadsError::Config(_) => "config",
            MadsError::EmptyInput(_) => "empty_input",
            MadsError::Vocabulary { .. } => "vocabulary",
            MadsError::Shape(_) => "shape",
            MadsError::Length { .. } => "length",
            MadsError::Numerical(_) => "numerical",
            MadsError::Collection(_) => "collection",
            MadsError::EmptyViews { .. } => "empty_views",
            MadsError::Parse { .. } => "parse",
            MadsError::Enrichment { .. } => "enrichment",
            MadsError::Client(_) => "client",
            MadsError::Incompatible { .. } => "incompatible",
            MadsError::MissingFeatures { .. } => "missing_features",
            MadsError::Context { source, .. } => source.kind(),
        }
    }
}
