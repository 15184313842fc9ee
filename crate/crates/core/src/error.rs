use std::io;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
///
/// Each variant corresponds to one failure category so that callers (and the
/// CLI) can report a stable name via [`PiaError::kind`].
#[derive(Debug, Error)]
pub enum PiaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("adapter error: {0}")]
    Adapter(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("no face detected in frame {0}")]
    NoFace(usize),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("empty sequence: {0}")]
    EmptySequence(String),
    #[error("empty series: {0}")]
    EmptySeries(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PiaError {
    /// Stable category name, used in CLI error messages.
    pub fn kind(&self) -> &'static str {
        match self {
            PiaError::InvalidInput(_) => "InvalidInput",
            PiaError::Adapter(_) => "AdapterError",
            PiaError::Decode(_) => "DecodeError",
            PiaError::NoFace(_) => "NoFaceError",
            PiaError::Cache(_) => "CacheError",
            PiaError::Shape(_) => "ShapeError",
            PiaError::EmptySequence(_) => "EmptySequence",
            PiaError::EmptySeries(_) => "EmptySeries",
            PiaError::Numerical(_) => "NumericalError",
            PiaError::InvalidDataset(_) => "InvalidDataset",
            PiaError::Metric(_) => "MetricError",
            PiaError::InvalidConfig(_) => "InvalidConfig",
            PiaError::Io(_) => "IoError",
            PiaError::Json(_) => "JsonError",
        }
    }
}

pub type Result<T> = std::result::Result<T, PiaError>;
