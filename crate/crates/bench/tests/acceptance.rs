//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 6 read the desk-scale benchmark configured in
//! `configs/acceptance.toml` and `configs/acceptance_linear.toml`. With a warm
//! cache they replay in seconds; a cold run takes about 75 minutes on one core.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dabench::config::{BaseConfig, BenchConfig, DatasetConfig, MethodEntry};
use dabench::harness::run_nested_cv;
use dabench::records::TrialRecord;
use dabench::render::{build_table, scorer_analysis, ResultTable, ScorerChoice};
use dabench_core::dataset::{select, select_rows};
use dabench_core::estimators::{one_hot, softmax_loss_grad, EstimatorSpec, Featurizer};
use dabench_core::kernel::Gamma;
use dabench_core::linalg::{covariance, rbf_gram};
use dabench_core::mapping::{coral, linear_ot, CoralReg, MmdLsProblem};
use dabench_core::methods::{fit_method, score_cell, Family, FitData, MethodId, ScorerSettings, ValidationData};
use dabench_core::ot::{exact_ot_plan, sinkhorn_plan, uniform};
use dabench_core::reweight::*;
use dabench_core::scorers::ScorerId;
use dabench_core::sim::{make_shift_dataset, ShiftKind, SimShiftSpec};
use dabench_core::stats::{pearson_r, wilcoxon_signed_rank, MIN_PAIRS};
use dabench_core::subspace::{sa_adapt, tca_adapt, tsl_objective, ProjectionKind};
use dabench_core::MASKED;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(name: &str) -> BenchConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    BenchConfig::from_path(&path).unwrap()
}

fn normal(n: usize, d: usize, shift: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal) + shift)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| format!("{x:.3}"))
}

const COV: &str = "Cov. shift";
const TAR: &str = "Tar. shift";
const COND: &str = "Cond. shift";
const SUB: &str = "Sub. shift";

struct Bench {
    records: Vec<TrialRecord>,
    selected: ResultTable,
    supervised: ResultTable,
}

impl Bench {
    fn load(name: &str) -> Self {
        let out = run_nested_cv(&config(name)).unwrap();
        let selected = build_table(&out.records, ScorerChoice::Selected).unwrap();
        let supervised = build_table(&out.records, ScorerChoice::Fixed(ScorerId::Supervised)).unwrap();
        Self { records: out.records, selected, supervised }
    }
}

fn baseline_anchors(b: &Bench) -> Outcome {
    let anchors = [(COV, 0.88, 0.92), (TAR, 0.85, 0.93), (COND, 0.66, 0.82), (SUB, 0.19, 0.98)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (d, src, tgt) in anchors {
        let (a, t) = (b.selected.mean(MethodId::TrainSrc, d), b.selected.mean(MethodId::TrainTgt, d));
        ok &= a.is_some_and(|v| (v - src).abs() <= 0.05) && t.is_some_and(|v| (v - tgt).abs() <= 0.05);
        parts.push(format!("{d} {}/{} (want {src}/{tgt})", fmt(a), fmt(t)));
    }
    ensure(ok, parts.join(", "))
}

fn conditional_mapping(b: &Bench) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [MethodId::MapOt, MethodId::EntOt, MethodId::ClassRegOt, MethodId::Jdot] {
        let v = b.supervised.mean(m, COND);
        ok &= v.is_some_and(|v| v >= 0.78);
        parts.push(format!("{} {}", m.display(), fmt(v)));
    }
    ensure(ok, format!("supervised scorer on {COND}, want >= 0.78: {}", parts.join(", ")))
}

fn target_shift(b: &Bench) -> Outcome {
    let tars = b.supervised.mean(MethodId::MmdTarS, TAR);
    let src = b.selected.mean(MethodId::TrainSrc, TAR);
    let mut ok = tars.is_some_and(|v| v >= 0.90) && src.is_some();
    let mut parts = vec![format!("MMDTarS supervised {} (want >= 0.90)", fmt(tars)), format!("Train Src {}", fmt(src))];
    for m in MethodId::ALL.into_iter().filter(|m| m.family() == Family::Mapping) {
        let v = b.selected.mean(m, TAR);
        ok &= matches!((v, src), (Some(v), Some(s)) if v < s);
        parts.push(format!("{} {}", m.display(), fmt(v)));
    }
    ensure(ok, parts.join(", "))
}

fn subspace_shift(b: &Bench) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [MethodId::Tca, MethodId::MmdLs] {
        let v = b.selected.mean(m, SUB);
        ok &= v.is_some_and(|v| v >= 0.50);
        parts.push(format!("{} {}", m.display(), fmt(v)));
    }
    ensure(ok, format!("selected scorer on {SUB}, want >= 0.50: {}", parts.join(", ")))
}

fn linear_reweighting(b: &Bench) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [MethodId::DensRw, MethodId::GaussRw] {
        let v = b.selected.mean(m, COV);
        ok &= v.is_some_and(|v| v >= 0.85);
        parts.push(format!("{} {}", m.display(), fmt(v)));
    }
    parts.push(format!("Train Src {}", fmt(b.selected.mean(MethodId::TrainSrc, COV))));
    ensure(ok, format!("linear base on {COV}, want >= 0.85: {}", parts.join(", ")))
}

fn scorer_ordering(b: &Bench) -> Outcome {
    let analysis = scorer_analysis(&b.records).unwrap();
    let rho = |s: ScorerId| analysis.scorers.iter().find(|c| c.scorer_id == s).and_then(|c| c.pearson).unwrap_or(f64::NAN);
    let (sup, circ, iw, mix) = (rho(ScorerId::Supervised), rho(ScorerId::CircV), rho(ScorerId::Iw), rho(ScorerId::MixVal));
    let rest = [ScorerId::Pe, ScorerId::Dev, ScorerId::Snd].map(rho);
    let worst = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ok = sup >= 0.9 && sup > circ && circ >= iw && iw > mix && mix > worst;
    // diagnostic only: the criterion is the pooled correlation above
    let within = |s: ScorerId| {
        let per: Vec<f64> = [COV, TAR, COND, SUB]
            .iter()
            .filter_map(|d| {
                let (x, y): (Vec<f64>, Vec<f64>) = b
                    .records
                    .iter()
                    .filter(|r| r.scorer_id == s && r.dataset == *d && !r.method_id.is_baseline() && r.is_valid())
                    .filter_map(|r| Some((r.cv_score?, r.target_test_accuracy?)))
                    .unzip();
                pearson_r(&x, &y).ok()
            })
            .collect();
        per.iter().sum::<f64>() / per.len() as f64
    };
    let per_dataset: Vec<String> = ScorerId::ALL.into_iter().map(|s| format!("{} {:.2}", s.name(), within(s))).collect();
    ensure(
        ok,
        format!(
            "pooled rho supervised {sup:.3}, CircV {circ:.3}, IW {iw:.3}, MixVal {mix:.3}, PE {:.3}, DEV {:.3}, SND {:.3}; mean within-shift rho {}",
            rest[0],
            rest[1],
            rest[2],
            per_dataset.join(", ")
        ),
    )
}

const PERMS3: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn optimal_transport() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut worst_marginal = 0.0f64;
    let mut entropic_ok = true;
    for _ in 0..5 {
        let c = DMatrix::from_fn(20, 15, |_, _| rng.random::<f64>());
        let (a, b) = (uniform(20), uniform(15));
        let plan = sinkhorn_plan(&c, &a, &b, 0.05, 1e-9, 100_000).unwrap();
        worst_marginal = worst_marginal.max(plan.marginal_error());
        entropic_ok &= plan.cost(&c) >= exact_ot_plan(&c, &a, &b).unwrap().cost(&c) - 1e-12;
    }
    // every 3x3 integer cost with entries in 0..=5 against the permutation optimum
    let a = uniform(3);
    let mut worst_gap = 0.0f64;
    let mut instances = 0usize;
    for code in 0..6usize.pow(9) {
        let c = DMatrix::from_fn(3, 3, |i, j| ((code / 6usize.pow((i * 3 + j) as u32)) % 6) as f64);
        let best = PERMS3.iter().map(|p| (0..3).map(|i| c[(i, p[i])]).sum::<f64>() / 3.0).fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.max((exact_ot_plan(&c, &a, &a).unwrap().cost(&c) - best).abs());
        instances += 1;
    }
    ensure(
        worst_marginal <= 1e-6 && worst_gap < 1e-12 && entropic_ok,
        format!("sinkhorn marginal {worst_marginal:.1e}, exact gap {worst_gap:.1e} over {instances} instances, entropic >= exact: {entropic_ok}"),
    )
}

fn kernel_mean_matching() -> Outcome {
    let (xs, xt) = (normal(30, 2, 0.0, 80), normal(25, 2, 1.0, 81));
    let b = 3.0;
    let w = kmm_weights(&xs, &xt, Gamma::Median, b, 1e-9, 5000).unwrap();
    let in_box = w.values.iter().all(|&v| (0.0..=b).contains(&v));
    let mean_err = (w.values.iter().sum::<f64>() / 30.0 - 1.0).abs();

    let xs3 = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 2.0]);
    let xt3 = DMatrix::from_row_slice(4, 1, &[0.4, 0.6, 1.8, 2.1]);
    let (k, kappa) = kmm_problem(&xs3, &xt3, 1.0);
    let (w3, _) = kmm_solve(&k, &kappa, 1000.0, 1e-12, 100_000);
    let mut best = (f64::INFINITY, DVector::zeros(3));
    for i in 0..=300 {
        for j in 0..=(300 - i) {
            let cand = DVector::from_vec(vec![i as f64 * 0.01, j as f64 * 0.01, 3.0 - (i + j) as f64 * 0.01]);
            let o = kmm_objective(&k, &kappa, &cand);
            if o < best.0 {
                best = (o, cand);
            }
        }
    }
    let qp_gap = (&w3 - &best.1).amax();

    let x = normal(120, 2, 0.0, 82);
    let y: Vec<i64> = (0..120).map(|i| (i % 2) as i64).collect();
    let small = normal(90, 2, 0.0, 83);
    let dev = |w: &SampleWeights| w.values.iter().fold(0.0f64, |a, v| a.max((v - 1.0).abs()));
    let mut devs = Vec::new();
    for kind in [
        RatioKind::Kde { bandwidth: Bandwidth::Scott },
        RatioKind::Gaussian { reg: None },
        RatioKind::Discriminative { classifier: DomainClassifier::Lr },
        RatioKind::NearestNeighbor { laplace_smoothing: true },
    ] {
        devs.push(dev(&density_ratio_weights(&kind, &x, &x).unwrap()));
    }
    devs.push(dev(&kliep_weights(&small, &small, Gamma::Value(1.0), 100, 1e-6, 1000).unwrap()));
    devs.push(dev(&kmm_weights(&x, &x, Gamma::Value(1.0), 1000.0, 1e-9, 5000).unwrap()));
    devs.push(dev(&mmd_target_shift_weights(&x, &y, &x, Gamma::Value(1.0), 1e-6, 1e-9, 1000).unwrap()));
    let worst_dev = devs.iter().copied().fold(0.0, f64::max);
    ensure(
        in_box && mean_err < 1e-9 && qp_gap <= 0.02 && worst_dev < 0.1,
        format!("box {in_box}, mean error {mean_err:.1e}, QP gap {qp_gap:.4}, max |w-1| on identical domains {worst_dev:.3} over {} reweighters", devs.len()),
    )
}

/// Worst relative central-difference error of `g` against `f` at `theta`.
fn fd_error(theta: &[f64], g: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..theta.len() {
        let mut p = theta.to_vec();
        p[k] += h;
        let fp = f(&p);
        p[k] -= 2.0 * h;
        let fd = (fp - f(&p)) / (2.0 * h);
        worst = worst.max((fd - g[k]).abs() / fd.abs().max(1e-3));
    }
    worst
}

fn mix(n: usize, m: &[f64; 9], shift: f64, seed: u64) -> DMatrix<f64> {
    normal(n, 3, 0.0, seed) * DMatrix::from_row_slice(3, 3, m) + DMatrix::from_element(n, 3, shift)
}

fn mappings_and_gradients() -> Outcome {
    let xs = mix(300, &[1.0, 0.2, 0.0, 0.0, 0.7, 0.3, 0.1, 0.0, 1.5], 1.0, 90);
    let xt = mix(250, &[0.5, -0.4, 0.2, 0.3, 1.2, 0.0, 0.0, 0.1, 0.4], -1.0, 91);
    let target_cov = covariance(&xt, true);
    let cov_err = |moved: DMatrix<f64>| (covariance(&moved, true) - &target_cov).amax();
    let coral_err = cov_err(coral(&xs, &xt, CoralReg::Value(1e-9), false).unwrap().apply(&xs).unwrap());
    let linot_err = cov_err(linear_ot(&xs, &xt, 1e-10, true).unwrap().apply(&xs).unwrap());

    let x = normal(40, 2, 0.0, 92);
    let sa_err = match sa_adapt(&x, &x, 2).unwrap().2.kind {
        ProjectionKind::Aligned { aligner, .. } => (aligner - DMatrix::identity(2, 2)).amax(),
        _ => f64::INFINITY,
    };
    let (es, et, _) = tca_adapt(&x, &x, 2, 10.0, 0.5).unwrap();
    let mmd = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        let (na, nb) = (a.nrows() as f64, b.nrows() as f64);
        rbf_gram(a, a, 0.5).sum() / (na * na) + rbf_gram(b, b, 0.5).sum() / (nb * nb) - 2.0 * rbf_gram(a, b, 0.5).sum() / (na * nb)
    };
    let tca_mmd = mmd(&es, &et).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(93);
    let y: Vec<i64> = (0..30).map(|i| (i % 2) as i64).collect();
    let xk = normal(30, 2, 0.0, 94);
    let spec = EstimatorSpec::Kernel { gamma: 0.5, l2: 1e-2 };
    let phi = Featurizer::new(&spec, &xk).unwrap().apply(&xk).unwrap();
    let q = one_hot(&y, &[0, 1]).unwrap();
    let sw: Vec<f64> = (0..30).map(|_| rng.random_range(0.5..1.5)).collect();
    let theta: Vec<f64> = (0..phi.ncols() * 2 + 2).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut g = vec![0.0; theta.len()];
    softmax_loss_grad(&phi, &q, &sw, 1e-2, &theta, &mut g);
    let klr = fd_error(&theta, &g, |t| softmax_loss_grad(&phi, &q, &sw, 1e-2, t, &mut vec![0.0; t.len()]));

    let a = rbf_gram(&normal(30, 2, 0.0, 95), &normal(8, 2, 0.3, 96), 0.7);
    let alpha: Vec<f64> = (0..8).map(|i| 0.5 + 0.1 * i as f64).collect();
    let kliep_g = kliep_objective(&a, &DVector::from_column_slice(&alpha)).1;
    let kliep = fd_error(&alpha, kliep_g.as_slice(), |t| kliep_objective(&a, &DVector::from_column_slice(t)).0);

    let ys: Vec<i64> = (0..40).map(|i| (i % 2) as i64).collect();
    let problem = MmdLsProblem::new(&normal(40, 3, 0.0, 97), &ys, &normal(30, 3, 0.5, 98), 0.5, 1e-6, 0.1).unwrap();
    let theta: Vec<f64> = problem.initial().iter().map(|v| v + 0.3 * (rng.random::<f64>() - 0.5)).collect();
    let mut g = vec![0.0; theta.len()];
    problem.objective(&theta, &mut g);
    let mmdls = fd_error(&theta, &g, |t| problem.objective(t, &mut vec![0.0; t.len()]));

    let xs_t = DMatrix::from_fn(30, 3, |i, _| rng.sample::<f64, _>(StandardNormal) + y[i] as f64);
    let xt_t = normal(25, 3, 0.5, 99);
    let w = DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (_, tg) = tsl_objective(&xs_t, &y, &xt_t, &w, 1.0, 1.5, 1e-3).unwrap();
    let tsl = fd_error(w.as_slice(), tg.as_slice(), |t| {
        tsl_objective(&xs_t, &y, &xt_t, &DMatrix::from_column_slice(3, 2, t), 1.0, 1.5, 1e-3).unwrap().0
    });

    let fd_worst = [klr, kliep, mmdls, tsl].into_iter().fold(0.0, f64::max);
    ensure(
        coral_err < 1e-4 && linot_err < 1e-4 && sa_err < 1e-8 && tca_mmd < 1e-10 && fd_worst < 1e-5,
        format!(
            "CORAL cov {coral_err:.1e}, LinOT cov {linot_err:.1e}, |M-I| {sa_err:.1e}, TCA MMD {tca_mmd:.1e}, FD kernel-logistic {klr:.1e} KLIEP {kliep:.1e} MMD-LS {mmdls:.1e} TSL {tsl:.1e}"
        ),
    )
}

/// Two-sided p by listing every sign pattern of the ranked differences.
fn brute_force_p(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&a| {
            let less = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        le += (w <= observed + 1e-9) as u64;
        ge += (w >= observed - 1e-9) as u64;
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

fn statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for n in MIN_PAIRS..=12 {
        for _ in 0..20 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 * 0.8).collect();
            let r = wilcoxon_signed_rank(&x, &y, 0.05).unwrap();
            if r.n_used >= MIN_PAIRS {
                worst = worst.max((r.p_value - brute_force_p(&x, &y)).abs());
                compared += 1;
            }
        }
    }
    let x = [1.0, 2.0, 3.0, 4.0];
    let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 3.0).collect();
    // r for (1,2,3) vs (1,2,4) is 3 / sqrt(2 * 14/3)
    let closed = 3.0 / (2.0f64 * 14.0 / 3.0).sqrt();
    let pearson_err = [
        (pearson_r(&x, &x).unwrap() - 1.0).abs(),
        (pearson_r(&x, &y).unwrap() + 1.0).abs(),
        (pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - closed).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    ensure(
        worst < 1e-12 && compared > 0 && pearson_err < 1e-12,
        format!("wilcoxon max |p - enumeration| {worst:.1e} over {compared} samples, pearson closed-form error {pearson_err:.1e}"),
    )
}

fn harness_contract() -> Outcome {
    let methods = ["train_src", "coral", "dens_rw", "sa"];
    let mut cfg = BenchConfig::simulated(60, 3);
    cfg.datasets = vec![DatasetConfig::sim(ShiftKind::Covariate, 60, 3), DatasetConfig::sim(ShiftKind::Target, 60, 3)];
    cfg.methods = methods.iter().map(|m| MethodEntry::Name(m.to_string())).collect();
    cfg.n_outer = 2;
    cfg.n_inner = 2;
    cfg.base = BaseConfig::Fixed { estimator: EstimatorSpec::Linear { l2: 1e-3 } };
    let strip = |r: &[TrialRecord]| r.iter().map(TrialRecord::without_timing).collect::<Vec<_>>();

    let one = run_nested_cv(&cfg).unwrap();
    let mut parallel = cfg.clone();
    parallel.workers = 3;
    let deterministic = strip(&one.records) == strip(&run_nested_cv(&parallel).unwrap().records);

    let dir = tempfile::tempdir().unwrap();
    let mut cached = cfg.clone();
    cached.cache_dir = Some(dir.path().to_path_buf());
    let first = run_nested_cv(&cached).unwrap();
    let replay = run_nested_cv(&cached).unwrap();
    let same_table = build_table(&first.records, ScorerChoice::Selected).unwrap() == build_table(&replay.records, ScorerChoice::Selected).unwrap();
    let replayed = replay.fits == 0 && replay.records == first.records && same_table;

    let mut blind = cfg.clone();
    blind.scorers = ScorerId::ALL.into_iter().filter(|s| !s.is_supervised()).collect();
    let label_reads = run_nested_cv(&blind).unwrap().label_reads;
    let sentinel = sentinel_is_inert();

    let mut timed = cfg.clone();
    timed.timeout_seconds = 0.0;
    let out = run_nested_cv(&timed).unwrap();
    let table = build_table(&out.records, ScorerChoice::Selected).unwrap();
    let na = out.records.iter().all(|r| r.timed_out) && table.rows.iter().all(|r| r.cells.iter().all(|c| c.mean.is_none()));

    ensure(
        deterministic && replayed && label_reads == 0 && sentinel && na,
        format!(
            "workers 1 vs 3 identical: {deterministic}, replay fits {} and identical table: {replayed}, unsupervised label reads {label_reads}, masked sentinel inert: {sentinel}, timeout gives NA: {na}",
            replay.fits
        ),
    )
}

/// Unsupervised scores do not move when the target validation labels are
/// replaced by the masked sentinel.
fn sentinel_is_inert() -> bool {
    let ds = make_shift_dataset(&SimShiftSpec::new(ShiftKind::Conditional, 80, 1)).unwrap();
    let (s, t) = (ds.source_indices(), ds.target_indices());
    let (xs, ys, xt) = (select_rows(&ds.features, &s), select(&ds.labels, &s), select_rows(&ds.features, &t));
    let classes = ds.classes();
    let tr: Vec<usize> = (0..60).collect();
    let va: Vec<usize> = (60..80).collect();
    let (xs_tr, ys_tr, xt_tr) = (select_rows(&xs, &tr), select(&ys, &tr), select_rows(&xt, &tr));
    let (xs_va, ys_va, xt_va) = (select_rows(&xs, &va), select(&ys, &va), select_rows(&xt, &va));
    let masked_labels = vec![MASKED; va.len()];
    let scorers: Vec<ScorerId> = ScorerId::ALL.into_iter().filter(|s| !s.is_supervised()).collect();
    let data = FitData { xs: &xs_tr, ys: &ys_tr, xt: &xt_tr, yt: None, classes: &classes, base: EstimatorSpec::Linear { l2: 1e-3 } };
    let settings = ScorerSettings::default();
    [MethodId::TrainSrc, MethodId::DensRw, MethodId::EntOt, MethodId::Sa].into_iter().all(|m| {
        let spec = MethodEntry::Name(m.id().into()).resolve().unwrap();
        let cfg = &spec.cells[0].1;
        let model = fit_method(cfg, &data).unwrap();
        let blind = ValidationData { xs_val: &xs_va, ys_val: &ys_va, xt_val: &xt_va, yt_val: None };
        let masked = ValidationData { yt_val: Some(&masked_labels), ..blind };
        let a = score_cell(&model, cfg, &data, &blind, &scorers, &settings);
        let b = score_cell(&model, cfg, &data, &masked, &scorers, &settings);
        a.iter().zip(&b).all(|(x, y)| x.as_ref().map(|v| v.value).ok() == y.as_ref().map(|v| v.value).ok())
    })
}

fn run(id: usize, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    match &outcome {
        Ok(d) => println!("criterion {id:>2}: PASS {d}"),
        Err(d) => println!("criterion {id:>2}: FAIL {d}"),
    }
    outcome.is_ok()
}

#[test]
fn acceptance() {
    let main = catch_unwind(|| Bench::load("acceptance.toml"));
    let linear = catch_unwind(|| Bench::load("acceptance_linear.toml"));
    let with = |b: &std::thread::Result<Bench>, f: fn(&Bench) -> Outcome| -> Outcome {
        match b {
            Ok(b) => f(b),
            Err(_) => Err("benchmark run failed".into()),
        }
    };
    let results = [
        run(1, || with(&main, baseline_anchors)),
        run(2, || with(&main, conditional_mapping)),
        run(3, || with(&main, target_shift)),
        run(4, || with(&main, subspace_shift)),
        run(5, || with(&linear, linear_reweighting)),
        run(6, || with(&main, scorer_ordering)),
        run(7, optimal_transport),
        run(8, kernel_mean_matching),
        run(9, mappings_and_gradients),
        run(10, statistics),
        run(11, harness_contract),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
