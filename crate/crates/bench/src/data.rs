//! CSV ingestion of pre-embedded datasets.
//!
//! The file has a header row, an integer label column, a text domain column
//! and float feature columns. Source domain names map to ids 1, 2, … and
//! target names to −1, −2, … in the order the schema lists them. Rows of
//! other domains are skipped.

use std::path::Path;

use dabench_core::DomainDataset;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default = "default_label")]
    pub label_column: String,
    #[serde(default = "default_domain")]
    pub domain_column: String,
    /// `None` takes every remaining column.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    #[serde(default = "default_source")]
    pub source_domains: Vec<String>,
    #[serde(default = "default_target")]
    pub target_domains: Vec<String>,
}

fn default_label() -> String {
    "label".into()
}
fn default_domain() -> String {
    "domain".into()
}
fn default_source() -> Vec<String> {
    vec!["source".into()]
}
fn default_target() -> Vec<String> {
    vec!["target".into()]
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: default_label(),
            domain_column: default_domain(),
            feature_columns: None,
            source_domains: default_source(),
            target_domains: default_target(),
        }
    }
}

impl CsvSchema {
    pub fn shift_id(&self) -> String {
        format!("{}->{}", self.source_domains.join("+"), self.target_domains.join("+"))
    }
}

pub fn load_csv_dataset(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<DomainDataset> {
    let path = path.as_ref();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    load_from_reader(reader, schema, &name)
}

pub fn load_csv_str(text: &str, schema: &CsvSchema, name: &str) -> Result<DomainDataset> {
    let reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    load_from_reader(reader, schema, name)
}

fn load_from_reader<R: std::io::Read>(mut reader: csv::Reader<R>, schema: &CsvSchema, name: &str) -> Result<DomainDataset> {
    if schema.source_domains.is_empty() || schema.target_domains.is_empty() {
        return Err(BenchError::SchemaMismatch("schema needs at least one source and one target domain".into()));
    }
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |col: &str| {
        headers.iter().position(|h| h == col).ok_or_else(|| BenchError::SchemaMismatch(format!("missing column {col:?}")))
    };
    let label_at = find(&schema.label_column)?;
    let domain_at = find(&schema.domain_column)?;
    let feature_at: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != label_at && i != domain_at).collect(),
    };
    if feature_at.is_empty() {
        return Err(BenchError::SchemaMismatch("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut domain = Vec::new();
    let mut seen = vec![0usize; schema.source_domains.len() + schema.target_domains.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = row + 2;
        if record.len() != headers.len() {
            return Err(BenchError::SchemaMismatch(format!("line {line} has {} fields, header has {}", record.len(), headers.len())));
        }
        let d = &record[domain_at];
        let id = if let Some(k) = schema.source_domains.iter().position(|s| s == d) {
            seen[k] += 1;
            k as i32 + 1
        } else if let Some(k) = schema.target_domains.iter().position(|s| s == d) {
            seen[schema.source_domains.len() + k] += 1;
            -(k as i32) - 1
        } else {
            continue;
        };
        let label: i64 = record[label_at]
            .parse()
            .map_err(|_| BenchError::SchemaMismatch(format!("label {:?} on line {line} is not an integer", &record[label_at])))?;
        if label < 0 {
            return Err(BenchError::SchemaMismatch(format!("negative label on line {line}")));
        }
        for &j in &feature_at {
            match record[j].parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => return Err(BenchError::NonNumericFeature { line, column: headers[j].clone() }),
            }
        }
        labels.push(label);
        domain.push(id);
    }
    let names = schema.source_domains.iter().chain(&schema.target_domains);
    if let Some((name, _)) = names.zip(&seen).find(|(_, &c)| c == 0) {
        return Err(BenchError::EmptyDomain(name.clone()));
    }
    let features = DMatrix::from_row_slice(labels.len(), feature_at.len(), &values);
    Ok(DomainDataset::new(features, labels, domain, name, schema.shift_id())?)
}
