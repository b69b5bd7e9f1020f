//! Nested cross-validation over datasets, shifts, methods and scorers.
//!
//! Work units are (dataset, method, shift, outer split). A unit runs every
//! inner split of its outer split, fits each grid cell once per inner split,
//! evaluates every scorer, picks the best cell per scorer and refits it on
//! the outer-train sets. Splits are derived from hashed seeds, so every
//! method sees the same partitions and results can be paired.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use dabench_core::dataset::{select, select_rows};
use dabench_core::estimators::{select_base_estimator, EstimatorSpec};
use dabench_core::methods::{fit_cells, fit_method, score_cell, FitData, MethodConfig, ValidationData};
use dabench_core::metrics::{accuracy, macro_f1};
use dabench_core::scorers::{score_supervised, ScorerId};
use dabench_core::split::stratified_split;
use dabench_core::DomainDataset;
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::cache::{Cache, CacheKey};
use crate::config::{BaseConfig, BenchConfig, MethodSpec};
use crate::error::{BenchError, Result};
use crate::records::{TrialRecord, SCHEMA_VERSION};

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<TrialRecord>,
    /// Grid-cell fits and final refits executed by this run.
    pub fits: usize,
    /// (method, dataset) entries served from the cache.
    pub cache_hits: usize,
    /// Target validation label vectors handed to a scorer. Only the
    /// supervised scorer receives them.
    pub label_reads: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub progress: bool,
}

/// Deterministic seed from the run seed and a path of labels.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

/// Indices into the source and target rows of one shift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InnerSplit {
    pub s_train: Vec<usize>,
    pub s_val: Vec<usize>,
    pub t_train: Vec<usize>,
    pub t_val: Vec<usize>,
}

/// One outer split; inner splits partition its train sets only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OuterSplit {
    pub s_train: Vec<usize>,
    pub s_test: Vec<usize>,
    pub t_train: Vec<usize>,
    pub t_test: Vec<usize>,
    pub inner: Vec<InnerSplit>,
}

fn compose(outer_idx: &[usize], inner_idx: &[usize]) -> Vec<usize> {
    inner_idx.iter().map(|&i| outer_idx[i]).collect()
}

/// The nested split plan of one dataset shift. Source and target are split
/// separately, stratified by their own labels.
pub fn split_plan(ds: &DomainDataset, cfg: &BenchConfig) -> Result<Vec<OuterSplit>> {
    let ys = select(&ds.labels, &ds.source_indices());
    let yt = select(&ds.labels, &ds.target_indices());
    let seed = |tag: &str| derive_seed(cfg.seed, &[&ds.name, &ds.shift_id, tag]);
    let outer_s = stratified_split(&ys, cfg.ratio, cfg.n_outer, seed("outer-source"))?;
    let outer_t = stratified_split(&yt, cfg.ratio, cfg.n_outer, seed("outer-target"))?;
    let mut outer = Vec::with_capacity(cfg.n_outer);
    for (k, ((s_train, s_test), (t_train, t_test))) in outer_s.repeats.into_iter().zip(outer_t.repeats).enumerate() {
        let inner_s = stratified_split(&select(&ys, &s_train), cfg.ratio, cfg.n_inner, seed(&format!("inner-source-{k}")))?;
        let inner_t = stratified_split(&select(&yt, &t_train), cfg.ratio, cfg.n_inner, seed(&format!("inner-target-{k}")))?;
        let inner = inner_s
            .repeats
            .iter()
            .zip(&inner_t.repeats)
            .map(|((a, b), (c, d))| InnerSplit {
                s_train: compose(&s_train, a),
                s_val: compose(&s_train, b),
                t_train: compose(&t_train, c),
                t_val: compose(&t_train, d),
            })
            .collect();
        outer.push(OuterSplit { s_train, s_test, t_train, t_test, inner });
    }
    Ok(outer)
}

/// One dataset shift with its split plan.
struct Shift {
    dataset: String,
    shift_id: String,
    xs: DMatrix<f64>,
    ys: Vec<i64>,
    xt: DMatrix<f64>,
    yt: Vec<i64>,
    classes: Vec<i64>,
    outer: Vec<OuterSplit>,
    base: OnceLock<std::result::Result<EstimatorSpec, String>>,
}

impl Shift {
    fn new(ds: DomainDataset, cfg: &BenchConfig) -> Result<Self> {
        let (s, t) = (ds.source_indices(), ds.target_indices());
        let xs = select_rows(&ds.features, &s);
        let ys = select(&ds.labels, &s);
        let xt = select_rows(&ds.features, &t);
        let yt = select(&ds.labels, &t);
        if yt.contains(&dabench_core::MASKED) {
            return Err(BenchError::Config(format!("{}: target labels are needed for evaluation", ds.name)));
        }
        let outer = split_plan(&ds, cfg)?;
        let classes = ds.classes();
        Ok(Self { dataset: ds.name, shift_id: ds.shift_id, xs, ys, xt, yt, classes, outer, base: OnceLock::new() })
    }

    fn base(&self, cfg: &BenchConfig) -> std::result::Result<EstimatorSpec, String> {
        self.base
            .get_or_init(|| match &cfg.base {
                BaseConfig::Fixed { estimator } => Ok(*estimator),
                BaseConfig::Auto { candidates } => {
                    let seed = derive_seed(cfg.seed, &[&self.dataset, &self.shift_id, "base"]);
                    stratified_split(&self.ys, cfg.ratio, cfg.n_inner, seed)
                        .and_then(|plan| select_base_estimator(&self.xs, &self.ys, candidates, &plan))
                        .map_err(|e| format!("base estimator selection failed: {e}"))
                }
            })
            .clone()
    }
}

/// Shared timer of one (dataset, method, shift) nested loop.
struct Group {
    start: OnceLock<Instant>,
    expired: AtomicBool,
    budget: Duration,
}

impl Group {
    fn new(timeout_seconds: f64) -> Self {
        Self { start: OnceLock::new(), expired: AtomicBool::new(false), budget: Duration::from_secs_f64(timeout_seconds) }
    }

    fn begin(&self) {
        self.start.get_or_init(Instant::now);
    }

    fn check(&self) -> bool {
        if self.expired.load(Ordering::Relaxed) {
            return true;
        }
        let over = self.start.get().is_some_and(|s| s.elapsed() >= self.budget);
        if over {
            self.expired.store(true, Ordering::Relaxed);
        }
        over
    }
}

#[derive(Default)]
struct Counters {
    fits: AtomicUsize,
    label_reads: AtomicUsize,
}

enum Outcome {
    Done(Vec<TrialRecord>),
    TimedOut,
}

struct Unit {
    dataset: usize,
    method: usize,
    shift: usize,
    outer: usize,
}

fn blank(shift: &Shift, method: &MethodSpec, scorer: ScorerId, k: usize) -> TrialRecord {
    TrialRecord {
        schema_version: SCHEMA_VERSION,
        dataset: shift.dataset.clone(),
        shift_id: shift.shift_id.clone(),
        method_id: method.method_id,
        scorer_id: scorer,
        outer_split_index: k,
        chosen_params: None,
        cv_score: None,
        target_test_accuracy: None,
        source_test_accuracy: None,
        target_test_f1: None,
        fit_seconds: 0.0,
        timed_out: false,
        failed: false,
        failure_reason: None,
        base: None,
    }
}

fn failed_records(shift: &Shift, method: &MethodSpec, scorers: &[ScorerId], k: usize, reason: &str) -> Vec<TrialRecord> {
    scorers
        .iter()
        .map(|&s| TrialRecord { failed: true, failure_reason: Some(reason.to_string()), ..blank(shift, method, s, k) })
        .collect()
}

/// Successes needed for a cell's mean inner score to count.
pub fn quorum(n_inner: usize) -> usize {
    n_inner.div_ceil(2)
}

fn run_unit(shift: &Shift, method: &MethodSpec, k: usize, cfg: &BenchConfig, group: &Group, counters: &Counters) -> Outcome {
    group.begin();
    let base = match method.base.map(Ok).unwrap_or_else(|| shift.base(cfg)) {
        Ok(b) => b,
        Err(reason) => return Outcome::Done(failed_records(shift, method, &cfg.scorers, k, &reason)),
    };
    let classes = &shift.classes;
    let outer = &shift.outer[k];
    let oracle = method.method_id.is_oracle();
    let cfgs: Vec<MethodConfig> = method.cells.iter().map(|c| c.1.clone()).collect();
    let unsupervised: Vec<ScorerId> = cfg.scorers.iter().copied().filter(|s| !s.is_supervised()).collect();
    let slot = |s: ScorerId| cfg.scorers.iter().position(|&x| x == s).expect("configured scorer");
    // inner scores per cell and scorer, from successful inner splits only
    let mut scores: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); cfg.scorers.len()]; cfgs.len()];

    for inner in &outer.inner {
        if group.check() {
            return Outcome::TimedOut;
        }
        let xs_tr = select_rows(&shift.xs, &inner.s_train);
        let ys_tr = select(&shift.ys, &inner.s_train);
        let xt_tr = select_rows(&shift.xt, &inner.t_train);
        let yt_tr = oracle.then(|| select(&shift.yt, &inner.t_train));
        let xs_va = select_rows(&shift.xs, &inner.s_val);
        let ys_va = select(&shift.ys, &inner.s_val);
        let xt_va = select_rows(&shift.xt, &inner.t_val);
        let data = FitData { xs: &xs_tr, ys: &ys_tr, xt: &xt_tr, yt: yt_tr.as_deref(), classes, base };
        let (models, n) = fit_cells(&cfgs, &data, &|| group.check());
        counters.fits.fetch_add(n, Ordering::Relaxed);
        if group.check() {
            return Outcome::TimedOut;
        }
        // unsupervised scorers get no target labels at all
        let val = ValidationData { xs_val: &xs_va, ys_val: &ys_va, xt_val: &xt_va, yt_val: None };
        for (c, model) in models.iter().enumerate() {
            let Ok(model) = model else { continue };
            let values = score_cell(model, &cfgs[c], &data, &val, &unsupervised, &cfg.scorer_settings);
            for (s, v) in unsupervised.iter().zip(values) {
                if let Ok(v) = v {
                    scores[c][slot(*s)].push(v.value);
                }
            }
            if cfg.scorers.contains(&ScorerId::Supervised) {
                let yt_va = select(&shift.yt, &inner.t_val);
                counters.label_reads.fetch_add(1, Ordering::Relaxed);
                if let Ok(v) = model.predict_target(&xt_va).and_then(|p| score_supervised(&p, &yt_va)) {
                    scores[c][slot(ScorerId::Supervised)].push(v.value);
                }
            }
        }
    }
    if group.check() {
        return Outcome::TimedOut;
    }

    // per scorer: argmax of the mean inner score, first grid cell on ties
    let need = quorum(cfg.n_inner);
    let choice: Vec<Option<(usize, f64)>> = (0..cfg.scorers.len())
        .map(|s| {
            let mut best: Option<(usize, f64)> = None;
            for (c, cell) in scores.iter().enumerate() {
                let v = &cell[s];
                if v.len() < need {
                    continue;
                }
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                if best.is_none_or(|(_, b)| mean > b) {
                    best = Some((c, mean));
                }
            }
            best
        })
        .collect();

    let xs_tr = select_rows(&shift.xs, &outer.s_train);
    let ys_tr = select(&shift.ys, &outer.s_train);
    let xt_tr = select_rows(&shift.xt, &outer.t_train);
    let yt_tr = oracle.then(|| select(&shift.yt, &outer.t_train));
    let xs_te = select_rows(&shift.xs, &outer.s_test);
    let ys_te = select(&shift.ys, &outer.s_test);
    let xt_te = select_rows(&shift.xt, &outer.t_test);
    let yt_te = select(&shift.yt, &outer.t_test);
    let data = FitData { xs: &xs_tr, ys: &ys_tr, xt: &xt_tr, yt: yt_tr.as_deref(), classes, base };

    type Eval = std::result::Result<(f64, f64, f64, f64), String>;
    let mut refits: BTreeMap<usize, Eval> = BTreeMap::new();
    let mut records = Vec::with_capacity(cfg.scorers.len());
    for (s, &scorer) in cfg.scorers.iter().enumerate() {
        let mut rec = blank(shift, method, scorer, k);
        rec.base = Some(base);
        let Some((c, cv)) = choice[s] else {
            rec.failed = true;
            rec.failure_reason = Some(format!("no grid cell scored on at least {need} inner splits"));
            records.push(rec);
            continue;
        };
        if group.check() {
            return Outcome::TimedOut;
        }
        let eval = refits.entry(c).or_insert_with(|| {
            counters.fits.fetch_add(1, Ordering::Relaxed);
            let t0 = Instant::now();
            let model = fit_method(&cfgs[c], &data).map_err(|e| format!("final refit failed: {e}"))?;
            let secs = t0.elapsed().as_secs_f64();
            let pred = model.predict_target(&xt_te).map_err(|e| e.to_string())?.labels();
            let acc = accuracy(&yt_te, &pred).map_err(|e| e.to_string())?;
            let f1 = macro_f1(&yt_te, &pred, Some(classes)).map_err(|e| e.to_string())?;
            let src = model.predict_source(&xs_te, &ys_te).map_err(|e| e.to_string())?.labels();
            let src_acc = accuracy(&ys_te, &src).map_err(|e| e.to_string())?;
            Ok((acc, src_acc, f1, secs))
        });
        rec.chosen_params = Some(method.cells[c].0.clone());
        rec.cv_score = Some(cv);
        match eval {
            Ok((acc, src, f1, secs)) => {
                rec.target_test_accuracy = Some(*acc);
                rec.source_test_accuracy = Some(*src);
                rec.target_test_f1 = Some(*f1);
                rec.fit_seconds = *secs;
            }
            Err(reason) => {
                rec.failed = true;
                rec.failure_reason = Some(reason.clone());
            }
        }
        records.push(rec);
    }
    Outcome::Done(records)
}

fn timed_out_records(shift: &Shift, method: &MethodSpec, cfg: &BenchConfig) -> Vec<TrialRecord> {
    (0..cfg.n_outer)
        .flat_map(|k| cfg.scorers.iter().map(move |&s| (k, s)))
        .map(|(k, s)| TrialRecord { timed_out: true, ..blank(shift, method, s, k) })
        .collect()
}

pub fn run_nested_cv(cfg: &BenchConfig) -> Result<RunOutput> {
    run_nested_cv_with(cfg, RunOptions::default())
}

pub fn run_nested_cv_with(cfg: &BenchConfig, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let methods = cfg.method_specs()?;
    let mut shifts: Vec<Vec<Shift>> = Vec::with_capacity(cfg.datasets.len());
    for d in &cfg.datasets {
        let loaded = d.load()?;
        shifts.push(loaded.into_iter().map(|ds| Shift::new(ds, cfg)).collect::<Result<_>>()?);
    }
    let cache = cfg.cache_root().map(Cache::new);

    // cache lookups per (dataset, method)
    let mut cached: BTreeMap<(usize, usize), Vec<TrialRecord>> = BTreeMap::new();
    let mut paths: BTreeMap<(usize, usize), std::path::PathBuf> = BTreeMap::new();
    if let Some(cache) = &cache {
        for (di, d) in cfg.datasets.iter().enumerate() {
            let fingerprint = d.fingerprint()?;
            for (mi, m) in methods.iter().enumerate() {
                let key = CacheKey {
                    schema_version: SCHEMA_VERSION,
                    method_id: m.method_id.id(),
                    grid: &m.grid,
                    method_base: &m.base,
                    dataset: &fingerprint,
                    seed: cfg.seed,
                    n_outer: cfg.n_outer,
                    n_inner: cfg.n_inner,
                    ratio: cfg.ratio,
                    scorers: &cfg.scorers,
                    base: &cfg.base,
                    scorer_settings: &cfg.scorer_settings,
                };
                let path = cache.path(m.method_id.id(), &d.name(), &key)?;
                if let Some(records) = cache.load(&path)? {
                    cached.insert((di, mi), records);
                }
                paths.insert((di, mi), path);
            }
        }
    }

    let mut units = Vec::new();
    for di in 0..cfg.datasets.len() {
        for mi in 0..methods.len() {
            if cached.contains_key(&(di, mi)) {
                continue;
            }
            for si in 0..shifts[di].len() {
                for k in 0..cfg.n_outer {
                    units.push(Unit { dataset: di, method: mi, shift: si, outer: k });
                }
            }
        }
    }
    let groups: BTreeMap<(usize, usize, usize), Group> = units
        .iter()
        .map(|u| ((u.dataset, u.method, u.shift), Group::new(cfg.timeout_seconds)))
        .collect();
    let counters = Counters::default();
    let results: Vec<OnceLock<Outcome>> = (0..units.len()).map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    let progress = Mutex::new(0usize);
    let started = Instant::now();

    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(u) = units.get(i) else { break };
        let shift = &shifts[u.dataset][u.shift];
        let method = &methods[u.method];
        let group = &groups[&(u.dataset, u.method, u.shift)];
        let outcome = catch_unwind(AssertUnwindSafe(|| run_unit(shift, method, u.outer, cfg, group, &counters)))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Outcome::Done(failed_records(shift, method, &cfg.scorers, u.outer, &format!("panicked: {msg}")))
            });
        if matches!(outcome, Outcome::TimedOut) {
            group.expired.store(true, Ordering::Relaxed);
        }
        let _ = results[i].set(outcome);
        if opts.progress {
            let mut done = progress.lock().unwrap_or_else(|e| e.into_inner());
            *done += 1;
            eprintln!(
                "[{:>4}/{}] {:>7.1}s  {} / {} / {} / outer {}",
                *done,
                units.len(),
                started.elapsed().as_secs_f64(),
                shift.dataset,
                shift.shift_id,
                method.method_id.display(),
                u.outer
            );
        }
    };
    std::thread::scope(|scope| {
        for _ in 1..cfg.workers.min(units.len().max(1)) {
            scope.spawn(work);
        }
        work();
    });

    // assemble in (dataset, method, shift, outer, scorer) order
    let mut fresh: BTreeMap<(usize, usize), Vec<TrialRecord>> = BTreeMap::new();
    let mut any_timeout: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    let mut by_group: BTreeMap<(usize, usize, usize), Vec<TrialRecord>> = BTreeMap::new();
    for (u, r) in units.iter().zip(results) {
        let key = (u.dataset, u.method, u.shift);
        let entry = by_group.entry(key).or_default();
        if let Some(Outcome::Done(recs)) = r.into_inner() {
            entry.extend(recs);
        }
    }
    for ((di, mi, si), recs) in by_group {
        let shift = &shifts[di][si];
        let method = &methods[mi];
        let timed_out = groups[&(di, mi, si)].expired.load(Ordering::Relaxed);
        let out = fresh.entry((di, mi)).or_default();
        if timed_out {
            *any_timeout.entry((di, mi)).or_default() = true;
            out.extend(timed_out_records(shift, method, cfg));
        } else {
            out.extend(recs);
        }
    }
    if let Some(cache) = &cache {
        for (key, recs) in &fresh {
            if !any_timeout.get(key).copied().unwrap_or(false) {
                cache.store(&paths[key], recs)?;
            }
        }
    }
    let cache_hits = cached.len();
    let mut records = Vec::new();
    for di in 0..cfg.datasets.len() {
        for mi in 0..methods.len() {
            if let Some(r) = cached.remove(&(di, mi)) {
                records.extend(r);
            } else if let Some(r) = fresh.remove(&(di, mi)) {
                records.extend(r);
            }
        }
    }
    Ok(RunOutput {
        records,
        fits: counters.fits.load(Ordering::Relaxed),
        cache_hits,
        label_reads: counters.label_reads.load(Ordering::Relaxed),
    })
}
