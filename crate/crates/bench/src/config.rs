//! Benchmark configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use dabench_core::estimators::EstimatorSpec;
use dabench_core::methods::{Grid, MethodConfig, MethodId, Params, ScorerSettings};
use dabench_core::scorers::ScorerId;
use dabench_core::sim::{make_shift_dataset, ShiftKind, SimShiftSpec};
use dabench_core::DomainDataset;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv_dataset, CsvSchema};
use crate::error::{BenchError, Result};

/// Overrides the configured cache directory.
pub const CACHE_ENV: &str = "DABENCH_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub datasets: Vec<DatasetConfig>,
    #[serde(default = "all_methods")]
    pub methods: Vec<MethodEntry>,
    #[serde(default = "all_scorers")]
    pub scorers: Vec<ScorerId>,
    #[serde(default = "five")]
    pub n_outer: usize,
    #[serde(default = "five")]
    pub n_inner: usize,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default)]
    pub seed: u64,
    /// Budget for the whole nested loop of one (method, dataset, shift).
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub base: BaseConfig,
    #[serde(default)]
    pub scorer_settings: ScorerSettings,
    #[serde(default)]
    pub output: OutputConfig,
}

fn all_methods() -> Vec<MethodEntry> {
    MethodId::ALL.iter().map(|m| MethodEntry::Name(m.id().to_string())).collect()
}
fn all_scorers() -> Vec<ScorerId> {
    ScorerId::ALL.to_vec()
}
fn five() -> usize {
    5
}
fn one() -> usize {
    1
}
fn default_ratio() -> f64 {
    0.8
}
fn default_timeout() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// One simulated shift.
    Sim {
        #[serde(default)]
        name: Option<String>,
        shift: ShiftKind,
        #[serde(default = "default_sim_n")]
        n_source: usize,
        #[serde(default = "default_sim_n")]
        n_target: usize,
        #[serde(default)]
        noise: Option<f64>,
        #[serde(default)]
        label_proportions: Option<Vec<f64>>,
        #[serde(default)]
        seed: u64,
    },
    /// Embedded features from a CSV file; each entry of `shifts` is one
    /// source/target pairing.
    Csv {
        name: String,
        path: PathBuf,
        #[serde(default = "default_label")]
        label_column: String,
        #[serde(default = "default_domain")]
        domain_column: String,
        #[serde(default)]
        feature_columns: Option<Vec<String>>,
        shifts: Vec<ShiftPair>,
    },
}

fn default_sim_n() -> usize {
    1000
}
fn default_label() -> String {
    "label".into()
}
fn default_domain() -> String {
    "domain".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

/// Display names used for the simulated shifts in tables.
pub fn sim_name(kind: ShiftKind) -> &'static str {
    match kind {
        ShiftKind::Covariate => "Cov. shift",
        ShiftKind::Target => "Tar. shift",
        ShiftKind::Conditional => "Cond. shift",
        ShiftKind::Subspace => "Sub. shift",
    }
}

impl DatasetConfig {
    pub fn name(&self) -> String {
        match self {
            DatasetConfig::Sim { name, shift, .. } => name.clone().unwrap_or_else(|| sim_name(*shift).to_string()),
            DatasetConfig::Csv { name, .. } => name.clone(),
        }
    }

    pub fn sim(kind: ShiftKind, n: usize, seed: u64) -> Self {
        DatasetConfig::Sim { name: None, shift: kind, n_source: n, n_target: n, noise: None, label_proportions: None, seed }
    }

    /// Materializes every shift of the dataset.
    pub fn load(&self) -> Result<Vec<DomainDataset>> {
        let name = self.name();
        match self {
            DatasetConfig::Sim { shift, n_source, n_target, noise, label_proportions, seed, .. } => {
                let mut spec = SimShiftSpec::new(*shift, *n_source, *seed);
                spec.n_target = *n_target;
                if let Some(v) = noise {
                    spec.noise = *v;
                }
                spec.label_proportions = label_proportions.clone();
                let mut ds = make_shift_dataset(&spec)?;
                ds.name = name;
                Ok(vec![ds])
            }
            DatasetConfig::Csv { path, label_column, domain_column, feature_columns, shifts, .. } => {
                if shifts.is_empty() {
                    return Err(BenchError::Config(format!("dataset {name:?} lists no shifts")));
                }
                shifts
                    .iter()
                    .map(|s| {
                        let schema = CsvSchema {
                            label_column: label_column.clone(),
                            domain_column: domain_column.clone(),
                            feature_columns: feature_columns.clone(),
                            source_domains: s.source.clone(),
                            target_domains: s.target.clone(),
                        };
                        let mut ds = load_csv_dataset(path, &schema)?;
                        ds.name = name.clone();
                        Ok(ds)
                    })
                    .collect()
            }
        }
    }

    /// Stable description of the data for cache keys; CSV files contribute
    /// their content hash.
    pub fn fingerprint(&self) -> Result<String> {
        let mut text = serde_json::to_string(self)?;
        if let DatasetConfig::Csv { path, .. } = self {
            text.push_str(&crate::cache::digest(&std::fs::read(path)?));
        }
        Ok(text)
    }
}

/// A method by name, or with an explicit grid and base estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodEntry {
    Name(String),
    Full {
        method: String,
        #[serde(default)]
        grid: Option<Grid>,
        #[serde(default)]
        base: Option<EstimatorSpec>,
    },
}

/// A resolved method with its typed grid.
#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub method_id: MethodId,
    pub grid: Grid,
    pub base: Option<EstimatorSpec>,
    pub cells: Vec<(Params, MethodConfig)>,
}

impl MethodSpec {
    pub fn new(method_id: MethodId, grid: Grid, base: Option<EstimatorSpec>) -> Result<Self> {
        let cells = grid
            .cells()?
            .into_iter()
            .map(|p| {
                let cfg = MethodConfig::parse(method_id, &p)
                    .map_err(|e| BenchError::Config(format!("{}: {e}", method_id.display())))?;
                Ok((p, cfg))
            })
            .collect::<Result<Vec<_>>>()?;
        if cells.is_empty() {
            return Err(BenchError::Config(format!("{}: empty grid", method_id.display())));
        }
        Ok(Self { method_id, grid, base, cells })
    }
}

impl MethodEntry {
    pub fn resolve(&self) -> Result<MethodSpec> {
        let (name, grid, base) = match self {
            MethodEntry::Name(n) => (n, None, None),
            MethodEntry::Full { method, grid, base } => (method, grid.clone(), *base),
        };
        let id = MethodId::parse(name).ok_or_else(|| BenchError::Config(format!("unknown method {name:?}")))?;
        MethodSpec::new(id, grid.unwrap_or_else(|| id.default_grid()), base)
    }
}

/// How the base estimator is chosen for each dataset shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseConfig {
    /// Cross-validated choice on the labeled source among `candidates`.
    Auto {
        #[serde(default = "default_candidates")]
        candidates: Vec<EstimatorSpec>,
    },
    Fixed {
        estimator: EstimatorSpec,
    },
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig::Auto { candidates: default_candidates() }
    }
}

pub fn default_candidates() -> Vec<EstimatorSpec> {
    let mut c: Vec<EstimatorSpec> = [1e-4, 1e-3, 1e-2, 1e-1].into_iter().map(|l2| EstimatorSpec::Linear { l2 }).collect();
    for gamma in [0.1, 1.0, 10.0] {
        for l2 in [1e-4, 1e-3, 1e-2] {
            c.push(EstimatorSpec::Kernel { gamma, l2 });
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Some(Format::Markdown),
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Format::Markdown => "md",
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("bench-results")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Markdown, Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out_dir(), formats: default_formats() }
    }
}

impl BenchConfig {
    /// The four simulated shifts with default settings.
    pub fn simulated(n: usize, seed: u64) -> Self {
        Self {
            datasets: ShiftKind::ALL.iter().map(|&k| DatasetConfig::sim(k, n, seed)).collect(),
            methods: all_methods(),
            scorers: all_scorers(),
            n_outer: 5,
            n_inner: 5,
            ratio: 0.8,
            seed,
            timeout_seconds: default_timeout(),
            cache_dir: None,
            workers: 1,
            base: BaseConfig::default(),
            scorer_settings: ScorerSettings::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: Self = if is_json {
            serde_json::from_str(&text).map_err(|e| BenchError::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| BenchError::Config(e.to_string()))?
        };
        // relative paths are read relative to the config file
        let dir = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        let mut cfg = cfg;
        for d in &mut cfg.datasets {
            if let DatasetConfig::Csv { path, .. } = d {
                rebase(path);
            }
        }
        if let Some(c) = &mut cfg.cache_dir {
            rebase(c);
        }
        rebase(&mut cfg.output.dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.datasets.is_empty() {
            return bad("no datasets".into());
        }
        if self.methods.is_empty() {
            return bad("no methods".into());
        }
        if self.scorers.is_empty() {
            return bad("no scorers".into());
        }
        if self.n_outer == 0 || self.n_inner == 0 || self.workers == 0 {
            return bad("n_outer, n_inner and workers must be positive".into());
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return bad(format!("ratio {} outside (0, 1)", self.ratio));
        }
        if !(self.timeout_seconds >= 0.0) {
            return bad("timeout_seconds must be non-negative".into());
        }
        if let BaseConfig::Auto { candidates } = &self.base {
            if candidates.is_empty() {
                return bad("no base estimator candidates".into());
            }
        }
        let mut names: Vec<String> = self.datasets.iter().map(DatasetConfig::name).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("dataset names must be unique".into());
        }
        let mut seen = Vec::new();
        for m in &self.methods {
            let spec = m.resolve()?;
            if seen.contains(&spec.method_id) {
                return bad(format!("{} listed twice", spec.method_id.display()));
            }
            seen.push(spec.method_id);
        }
        Ok(())
    }

    pub fn method_specs(&self) -> Result<Vec<MethodSpec>> {
        self.methods.iter().map(MethodEntry::resolve).collect()
    }

    /// Cache root after the environment override.
    pub fn cache_root(&self) -> Option<PathBuf> {
        match std::env::var_os(CACHE_ENV) {
            Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
            _ => self.cache_dir.clone(),
        }
    }
}
