use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid schema: {field}: {message}")]
    Schema { field: String, message: String },

    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid value for `{field}`: {message}")]
    InvalidValue { field: String, message: String },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("unknown outcome `{0}`")]
    UnknownOutcome(String),

    #[error("unknown record id `{0}`")]
    UnknownRecord(String),

    #[error("record does not match the model schema: {0}")]
    SchemaMismatch(String),

    #[error("dataset has no labels")]
    Unlabeled,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("outcome `{0}` has a single class in the training labels")]
    SingleClassOutcome(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file checksum mismatch or truncated file")]
    Checksum,

    #[error("unsupported model format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("encoded dimensionality {dims} exceeds the exact-SHAP guard of {limit}")]
    DimensionGuard { dims: usize, limit: usize },

    #[error("counterfactual precondition violated: {0}")]
    Precondition(String),

    #[error("group `{0}` is empty after partition")]
    EmptyGroup(String),
}

impl Error {
    /// Stable machine-readable code used by the service error envelope.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io_error",
            Error::Parse(_) => "parse_error",
            Error::Schema { .. } => "invalid_schema",
            Error::Cell { .. } => "invalid_cell",
            Error::UnknownColumn(_) => "unknown_column",
            Error::MissingColumn(_) => "missing_column",
            Error::InvalidValue { .. } => "invalid_value",
            Error::UnknownFeature(_) => "unknown_feature",
            Error::UnknownOutcome(_) => "unknown_outcome",
            Error::UnknownRecord(_) => "unknown_record",
            Error::SchemaMismatch(_) => "schema_mismatch",
            Error::Unlabeled => "unlabeled_dataset",
            Error::EmptyDataset => "empty_dataset",
            Error::SingleClassOutcome(_) => "single_class_outcome",
            Error::Config(_) => "invalid_config",
            Error::Checksum => "checksum_mismatch",
            Error::Version { .. } => "unsupported_version",
            Error::DimensionGuard { .. } => "dimension_guard",
            Error::Precondition(_) => "precondition_failed",
            Error::EmptyGroup(_) => "empty_group",
        }
    }

    /// The offending field path, when the error concerns one.
    pub fn field(&self) -> Option<String> {
        match self {
            Error::Schema { field, .. } | Error::InvalidValue { field, .. } => Some(field.clone()),
            Error::Cell { column, .. } => Some(column.clone()),
            Error::UnknownColumn(c) | Error::MissingColumn(c) => Some(c.clone()),
            Error::UnknownFeature(f) => Some(f.clone()),
            Error::UnknownOutcome(_) => Some("outcome".into()),
            Error::UnknownRecord(_) => Some("record".into()),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidValue {
            field: field.into(),
            message: message.into(),
        }
    }
}
