//! Benchmark harness: configuration, nested cross-validation, caching,
//! result tables and CSV ingestion.

pub mod cache;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod records;
pub mod render;

pub use config::BenchConfig;
pub use error::{BenchError, Result};
pub use harness::{run_nested_cv, RunOutput};
pub use records::TrialRecord;
