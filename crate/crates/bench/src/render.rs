//! Aggregation of trial records into result tables and scorer analyses.

use std::collections::BTreeMap;

use dabench_core::methods::MethodId;
use dabench_core::scorers::ScorerId;
use dabench_core::stats::{average_rank, pearson_r, wilcoxon_signed_rank, Direction};
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::{BenchError, Result};
use crate::records::TrialRecord;

pub const SIGNIFICANCE: f64 = 0.05;
/// p-value below which a significant change gets the double mark.
pub const STRONG_SIGNIFICANCE: f64 = 0.01;

/// Unsupervised scorer with the highest mean target accuracy for `method`
/// over all its valid records. Ties follow [`ScorerId::TIE_ORDER`].
pub fn select_best_scorer(records: &[TrialRecord], method: MethodId) -> Result<ScorerId> {
    let mut best: Option<(ScorerId, f64)> = None;
    for s in ScorerId::TIE_ORDER {
        let acc: Vec<f64> = records
            .iter()
            .filter(|r| r.method_id == method && r.scorer_id == s && r.is_valid())
            .filter_map(|r| r.target_test_accuracy)
            .collect();
        if acc.is_empty() {
            continue;
        }
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        if best.is_none_or(|(_, b)| mean > b) {
            best = Some((s, mean));
        }
    }
    best.map(|b| b.0).ok_or(BenchError::NoRecords)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    None,
    Gain,
    StrongGain,
    Drop,
    StrongDrop,
}

impl Mark {
    pub fn symbol(&self) -> &'static str {
        match self {
            Mark::None => "",
            Mark::Gain => "+",
            Mark::StrongGain => "++",
            Mark::Drop => "-",
            Mark::StrongDrop => "--",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Mark::None, Mark::Gain, Mark::StrongGain, Mark::Drop, Mark::StrongDrop].into_iter().find(|m| m.symbol() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// `None` renders as NA: timeouts, failures or no records.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
    pub p_value: Option<f64>,
    pub mark: Mark,
}

impl Cell {
    fn na() -> Self {
        Self { mean: None, std: None, n: 0, p_value: None, mark: Mark::None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method_id: MethodId,
    pub scorer_id: ScorerId,
    pub oracle: bool,
    pub cells: Vec<Cell>,
    pub average_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub datasets: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// Which scorer's records fill each method's row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerChoice {
    /// The per-method winner of [`select_best_scorer`].
    Selected,
    Fixed(ScorerId),
}

fn ordered_unique<T: PartialEq + Clone>(it: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for v in it {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Target accuracies keyed by (shift, outer split); `None` marks a trial
/// without a usable value.
fn trials(records: &[TrialRecord], method: MethodId, scorer: ScorerId, dataset: &str) -> BTreeMap<(String, usize), Option<f64>> {
    records
        .iter()
        .filter(|r| r.method_id == method && r.scorer_id == scorer && r.dataset == dataset)
        .map(|r| ((r.shift_id.clone(), r.outer_split_index), if r.is_valid() { r.target_test_accuracy } else { None }))
        .collect()
}

pub fn build_table(records: &[TrialRecord], choice: ScorerChoice) -> Result<ResultTable> {
    if records.is_empty() {
        return Err(BenchError::NoRecords);
    }
    let datasets = ordered_unique(records.iter().map(|r| r.dataset.clone()));
    let mut methods = ordered_unique(records.iter().map(|r| r.method_id));
    methods.sort_by_key(|m| MethodId::ALL.iter().position(|x| x == m));
    let pick = |m: MethodId| -> Result<ScorerId> {
        match choice {
            ScorerChoice::Fixed(s) => Ok(s),
            ScorerChoice::Selected => select_best_scorer(records, m).or_else(|_| {
                // rows without a valid unsupervised record still need a scorer
                records.iter().find(|r| r.method_id == m && !r.scorer_id.is_supervised()).map(|r| r.scorer_id).ok_or(BenchError::NoRecords)
            }),
        }
    };
    let base_scorer = pick(MethodId::TrainSrc).map_err(|_| BenchError::MissingBaseline(datasets[0].clone()))?;
    let mut rows = Vec::with_capacity(methods.len());
    for &m in &methods {
        let scorer = pick(m)?;
        let mut cells = Vec::with_capacity(datasets.len());
        for d in &datasets {
            let base = trials(records, MethodId::TrainSrc, base_scorer, d);
            if base.is_empty() {
                return Err(BenchError::MissingBaseline(d.clone()));
            }
            let mine = trials(records, m, scorer, d);
            if mine.is_empty() || mine.values().any(Option::is_none) {
                cells.push(Cell::na());
                continue;
            }
            let values: Vec<f64> = mine.values().map(|v| v.expect("checked")).collect();
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let (x, y): (Vec<f64>, Vec<f64>) =
                mine.iter().filter_map(|(k, v)| base.get(k).copied().flatten().map(|b| (v.expect("checked"), b))).unzip();
            let (p_value, mark) = if m == MethodId::TrainSrc || x.is_empty() {
                (None, Mark::None)
            } else {
                let w = wilcoxon_signed_rank(&x, &y, SIGNIFICANCE)?;
                let mark = match (w.significant, w.direction) {
                    (true, Direction::Gain) if w.p_value < STRONG_SIGNIFICANCE => Mark::StrongGain,
                    (true, Direction::Gain) => Mark::Gain,
                    (true, Direction::Drop) if w.p_value < STRONG_SIGNIFICANCE => Mark::StrongDrop,
                    (true, Direction::Drop) => Mark::Drop,
                    _ => Mark::None,
                };
                (Some(w.p_value), mark)
            };
            cells.push(Cell { mean: Some(mean), std: Some(std), n, p_value, mark });
        }
        rows.push(TableRow { method_id: m, scorer_id: scorer, oracle: m.is_oracle(), cells, average_rank: 0.0 });
    }
    let table: Vec<Vec<Option<f64>>> = rows.iter().map(|r| r.cells.iter().map(|c| c.mean).collect()).collect();
    for (row, rank) in rows.iter_mut().zip(average_rank(&table)?) {
        row.average_rank = rank;
    }
    Ok(ResultTable { datasets, rows })
}

const CSV_HEADER: [&str; 10] = ["method", "scorer", "oracle", "dataset", "mean", "std", "n", "p_value", "mark", "average_rank"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ResultTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| Method | Scorer |");
        for d in &self.datasets {
            s.push_str(&format!(" {d} |"));
        }
        s.push_str(" Rank |\n|---|---|");
        for _ in &self.datasets {
            s.push_str("---:|");
        }
        s.push_str("---:|\n");
        for r in &self.rows {
            let name = if r.oracle { format!("{} (oracle)", r.method_id.display()) } else { r.method_id.display().to_string() };
            s.push_str(&format!("| {name} | {} |", r.scorer_id.name()));
            for c in &r.cells {
                match c.mean {
                    Some(m) => s.push_str(&format!(" {m:.2}{} |", c.mark.symbol())),
                    None => s.push_str(" NA |"),
                }
            }
            s.push_str(&format!(" {:.2} |\n", r.average_rank));
        }
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            for (d, c) in self.datasets.iter().zip(&r.cells) {
                w.write_record([
                    r.method_id.id().to_string(),
                    r.scorer_id.name().to_string(),
                    r.oracle.to_string(),
                    d.clone(),
                    opt(c.mean),
                    opt(c.std),
                    c.n.to_string(),
                    opt(c.p_value),
                    c.mark.symbol().to_string(),
                    r.average_rank.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 csv"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let bad = |m: String| BenchError::SchemaMismatch(m);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers != CSV_HEADER {
            return Err(bad(format!("unexpected table header {headers:?}")));
        }
        let mut datasets: Vec<String> = Vec::new();
        let mut rows: Vec<TableRow> = Vec::new();
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(format!("bad number {s:?}")))
            }
        };
        for rec in rdr.records() {
            let rec = rec?;
            let method = MethodId::parse(&rec[0]).ok_or_else(|| bad(format!("unknown method {:?}", &rec[0])))?;
            let scorer = ScorerId::parse(&rec[1]).ok_or_else(|| bad(format!("unknown scorer {:?}", &rec[1])))?;
            let dataset = rec[3].to_string();
            if !datasets.contains(&dataset) {
                datasets.push(dataset);
            }
            let cell = Cell {
                mean: num(&rec[4])?,
                std: num(&rec[5])?,
                n: rec[6].parse().map_err(|_| bad("bad count".into()))?,
                p_value: num(&rec[7])?,
                mark: Mark::parse(&rec[8]).ok_or_else(|| bad(format!("bad mark {:?}", &rec[8])))?,
            };
            let rank = num(&rec[9])?.unwrap_or(f64::NAN);
            match rows.last_mut() {
                Some(r) if r.method_id == method => r.cells.push(cell),
                _ => rows.push(TableRow {
                    method_id: method,
                    scorer_id: scorer,
                    oracle: &rec[2] == "true",
                    cells: vec![cell],
                    average_rank: rank,
                }),
            }
        }
        Ok(Self { datasets, rows })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Markdown => Ok(self.to_markdown()),
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    pub fn row(&self, method: MethodId) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.method_id == method)
    }

    /// Mean of `method` on `dataset`, if present and not NA.
    pub fn mean(&self, method: MethodId, dataset: &str) -> Option<f64> {
        let j = self.datasets.iter().position(|d| d == dataset)?;
        self.row(method)?.cells[j].mean
    }
}

/// Correlation of one scorer's inner-validation score with the test accuracy
/// of the cells it chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerCorrelation {
    pub scorer_id: ScorerId,
    pub pearson: Option<f64>,
    pub n_points: usize,
    pub mean_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerAnalysis {
    pub scorers: Vec<ScorerCorrelation>,
    /// Per method, the unsupervised scorer the table would use.
    pub selected: Vec<(MethodId, ScorerId)>,
}

/// Pearson ρ between `cv_score` and target test accuracy over every
/// (DA method, dataset, shift, outer split). Baselines are left out since
/// their single cell gives the scorer nothing to choose.
pub fn scorer_analysis(records: &[TrialRecord]) -> Result<ScorerAnalysis> {
    if records.is_empty() {
        return Err(BenchError::NoRecords);
    }
    let scorers = ordered_unique(records.iter().map(|r| r.scorer_id));
    let mut out = Vec::new();
    for s in ScorerId::ALL.into_iter().filter(|s| scorers.contains(s)) {
        let (x, y): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|r| r.scorer_id == s && !r.method_id.is_baseline() && r.is_valid())
            .filter_map(|r| Some((r.cv_score?, r.target_test_accuracy?)))
            .unzip();
        let pearson = pearson_r(&x, &y).ok();
        let mean_accuracy = (!y.is_empty()).then(|| y.iter().sum::<f64>() / y.len() as f64);
        out.push(ScorerCorrelation { scorer_id: s, pearson, n_points: x.len(), mean_accuracy });
    }
    let methods = ordered_unique(records.iter().map(|r| r.method_id));
    let selected = methods.into_iter().filter_map(|m| select_best_scorer(records, m).ok().map(|s| (m, s))).collect();
    Ok(ScorerAnalysis { scorers: out, selected })
}

impl ScorerAnalysis {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Scorer | Pearson | Points | Mean accuracy |\n|---|---:|---:|---:|\n");
        for c in &self.scorers {
            let p = c.pearson.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into());
            let a = c.mean_accuracy.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into());
            s.push_str(&format!("| {} | {p} | {} | {a} |\n", c.scorer_id.name(), c.n_points));
        }
        s.push_str("\n| Method | Selected scorer |\n|---|---|\n");
        for (m, sc) in &self.selected {
            s.push_str(&format!("| {} | {} |\n", m.display(), sc.name()));
        }
        s
    }
}
