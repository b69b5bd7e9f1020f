//! Per-(method, dataset) record cache. Each entry is one JSON-lines file
//! whose name carries a hash of everything that determines its content.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::records::{parse_records, TrialRecord};

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let stem = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{stem}.{}.{:?}.tmp", std::process::id(), std::thread::current().id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

/// Everything a cached entry depends on.
#[derive(Serialize)]
pub struct CacheKey<'a> {
    pub schema_version: u32,
    pub method_id: &'a str,
    pub grid: &'a dabench_core::methods::Grid,
    pub method_base: &'a Option<dabench_core::estimators::EstimatorSpec>,
    pub dataset: &'a str,
    pub seed: u64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub ratio: f64,
    pub scorers: &'a [dabench_core::scorers::ScorerId],
    pub base: &'a crate::config::BaseConfig,
    pub scorer_settings: &'a dabench_core::methods::ScorerSettings,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, method_id: &str, dataset_name: &str, key: &CacheKey) -> Result<PathBuf> {
        let hash = digest(serde_json::to_string(key)?.as_bytes());
        let safe: String = dataset_name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        Ok(self.root.join(method_id).join(format!("{safe}-{}.jsonl", &hash[..16])))
    }

    pub fn load(&self, path: &Path) -> Result<Option<Vec<TrialRecord>>> {
        match std::fs::File::open(path) {
            Ok(f) => Ok(Some(parse_records(std::io::BufReader::new(f))?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn store(&self, path: &Path, records: &[TrialRecord]) -> Result<()> {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        atomic_write(path, text.as_bytes())
    }
}
