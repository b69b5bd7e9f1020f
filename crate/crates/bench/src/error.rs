use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] dabench_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("non-numeric value in feature column {column:?} on line {line}")]
    NonNumericFeature { line: usize, column: String },
    #[error("domain {0:?} has no rows")]
    EmptyDomain(String),
    #[error("no records to aggregate")]
    NoRecords,
    #[error("no Train Src baseline records for dataset {0:?}")]
    MissingBaseline(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;
