use thiserror::Error;

/// Errors produced by the ordiq library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown class: {0}")]
    UnknownClass(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),

    #[error(
        "segment shape ({rows}x{cols}) does not match encoder config ({want_rows}x{want_cols})"
    )]
    SegmentShapeMismatch {
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },

    #[error("degenerate embedding: pre-normalization output is the zero vector")]
    DegenerateEmbedding,

    #[error("non-positive label distance for distinct classes {a} and {b} (sampling bug?)")]
    NonPositiveLabelDistance { a: String, b: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training data contains segment labeled with missing class {0}")]
    MissingClassInTraining(String),

    #[error("segment at source index {0} has no label but one is required")]
    UnlabeledSegment(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("csv parse error at row {row}: {message}")]
    CsvData { row: usize, message: String },

    #[error("model file is corrupt or not an ordiq model: {0}")]
    BadModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
