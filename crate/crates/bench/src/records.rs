//! Trial records and their JSON-lines store.

use std::io::{BufRead, Write};
use std::path::Path;

use dabench_core::estimators::EstimatorSpec;
use dabench_core::methods::{MethodId, Params};
use dabench_core::scorers::ScorerId;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Outcome of one (dataset, shift, method, scorer, outer split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub dataset: String,
    pub shift_id: String,
    pub method_id: MethodId,
    pub scorer_id: ScorerId,
    pub outer_split_index: usize,
    pub chosen_params: Option<Params>,
    /// Mean inner-validation score of the chosen cell.
    pub cv_score: Option<f64>,
    pub target_test_accuracy: Option<f64>,
    pub source_test_accuracy: Option<f64>,
    pub target_test_f1: Option<f64>,
    pub fit_seconds: f64,
    pub timed_out: bool,
    pub failed: bool,
    pub failure_reason: Option<String>,
    pub base: Option<EstimatorSpec>,
}

impl TrialRecord {
    /// Has a usable target accuracy.
    pub fn is_valid(&self) -> bool {
        !self.timed_out && !self.failed && self.target_test_accuracy.is_some()
    }

    /// Copy with the timing field cleared, for byte-level comparisons.
    pub fn without_timing(&self) -> Self {
        Self { fit_seconds: 0.0, ..self.clone() }
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[TrialRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    crate::cache::atomic_write(path.as_ref(), text.as_bytes())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let file = std::fs::File::open(path)?;
    parse_records(std::io::BufReader::new(file))
}

pub fn parse_records(reader: impl BufRead) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TrialRecord = serde_json::from_str(&line)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(BenchError::Config(format!("record schema version {} (expected {SCHEMA_VERSION})", r.schema_version)));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn dump_records(mut w: impl Write, records: &[TrialRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
