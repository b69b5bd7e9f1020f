//! Methods that produce a target predictor directly: joint distribution OT,
//! OT label propagation and self-labeling DASVM.

use nalgebra::DMatrix;

use crate::dataset::{select, select_rows, vstack, PredictionSet};
use crate::error::{Error, Result};
use crate::estimators::{fit_soft, floored_ln, one_hot, EstimatorSpec, Featurizer, ProbPredictor};
use crate::linalg::sq_dists;
use crate::ot::{cost_matrix, exact_ot_plan, sinkhorn_plan, uniform, CostNorm, Metric, TransportPlan};

fn source_classes(ys: &[i64]) -> Result<Vec<i64>> {
    if ys.iter().any(|&v| v < 0) {
        return Err(Error::MaskedLabels);
    }
    let mut classes = ys.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    Ok(classes)
}

#[derive(Debug, Clone)]
pub struct JdotResult {
    pub predictor: ProbPredictor,
    /// Joint objective after each transport step that used a predictor.
    pub objective_trace: Vec<f64>,
    /// Number of transport steps taken.
    pub iterations: usize,
    /// Last transport plan and the predictor whose losses built its cost.
    pub plan: TransportPlan,
    pub plan_predictor: Option<ProbPredictor>,
    pub converged: bool,
    /// Set when the objective rose and the loop stopped early.
    pub nondecreasing: bool,
}

/// Cross-entropy of every source label under the target predictions:
/// entry (i, t) is −ln p_{y_i}(x_t).
pub fn label_loss_matrix(ys: &[i64], proba: &PredictionSet) -> Result<DMatrix<f64>> {
    let cols: Vec<usize> = ys
        .iter()
        .map(|y| proba.classes.binary_search(y).map_err(|_| Error::MaskedLabels))
        .collect::<Result<_>>()?;
    let p = &proba.probabilities;
    Ok(DMatrix::from_fn(ys.len(), p.nrows(), |i, t| -floored_ln(p[(t, cols[i])])))
}

/// Squared feature distances scaled to unit mean, the feature part of the
/// joint cost.
pub fn jdot_feature_cost(xs: &DMatrix<f64>, xt: &DMatrix<f64>) -> DMatrix<f64> {
    let d = sq_dists(xs, xt);
    let mean = d.mean();
    if mean > 0.0 {
        d / mean
    } else {
        d
    }
}

fn regularizer(f: &ProbPredictor) -> f64 {
    0.5 * f.spec.l2() * f.coef.norm_squared()
}

/// Refits on the target with labels transported by `plan`. Entries of the
/// transported label matrix below `thr` are dropped.
fn transported_fit(
    spec: &EstimatorSpec,
    featurizer: &Featurizer,
    xt: &DMatrix<f64>,
    ys_hot: &DMatrix<f64>,
    classes: &[i64],
    plan: &TransportPlan,
    thr: f64,
    init: Option<&ProbPredictor>,
) -> Result<ProbPredictor> {
    let nt = xt.nrows();
    let mut yth = plan.gamma.transpose() * ys_hot * nt as f64;
    yth.apply(|v| {
        if *v < thr {
            *v = 0.0
        }
    });
    let w: Vec<f64> = yth.row_iter().map(|r| r.sum()).collect();
    let keep: Vec<usize> = (0..nt).filter(|&t| w[t] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    let mut q = select_rows(&yth, &keep);
    for (r, &t) in keep.iter().enumerate() {
        q.row_mut(r).scale_mut(1.0 / w[t]);
    }
    let wk = select(&w, &keep);
    fit_soft(spec, featurizer.clone(), &select_rows(xt, &keep), &q, classes, Some(&wk), init)
}

/// Joint distribution optimal transport for classification. The cost
/// between source `i` and target `t` is
/// `alpha·d(x_i, x_t) + (1 − alpha)·CE(y_i, f(x_t))`, with `d` the squared
/// distance scaled to unit mean. The first plan uses the feature term alone.
#[allow(clippy::too_many_arguments)]
pub fn jdot_fit(
    xs: &DMatrix<f64>,
    ys: &[i64],
    xt: &DMatrix<f64>,
    alpha: f64,
    n_iter_max: usize,
    thr_weights: f64,
    tol: f64,
    base: &EstimatorSpec,
) -> Result<JdotResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParam(format!("alpha {alpha}")));
    }
    if xs.nrows() != ys.len() {
        return Err(Error::LengthMismatch(xs.nrows(), ys.len()));
    }
    let classes = source_classes(ys)?;
    let ys_hot = one_hot(ys, &classes)?;
    let feat = jdot_feature_cost(xs, xt);
    let (a, b) = (uniform(xs.nrows()), uniform(xt.nrows()));
    let featurizer = Featurizer::new(base, xt)?;

    let mut plan = exact_ot_plan(&(&feat * alpha), &a, &b)?;
    let mut f = transported_fit(base, &featurizer, xt, &ys_hot, &classes, &plan, thr_weights, None)?;
    let mut plan_predictor = None;
    let mut trace = Vec::new();
    let mut iterations = 1;
    let mut converged = n_iter_max <= 1;
    let mut nondecreasing = false;
    while iterations < n_iter_max {
        let loss = label_loss_matrix(ys, &f.predict_proba(xt)?)?;
        let cost = &feat * alpha + loss * (1.0 - alpha);
        let next = exact_ot_plan(&cost, &a, &b)?;
        iterations += 1;
        let obj = next.cost(&cost) + (1.0 - alpha) * regularizer(&f);
        if let Some(&prev) = trace.last() {
            if obj > prev + 1e-9 * f64::max(1.0, f64::abs(prev)) {
                nondecreasing = true;
                break;
            }
        }
        trace.push(obj);
        plan = next;
        plan_predictor = Some(f.clone());
        let step = if trace.len() >= 2 { trace[trace.len() - 2] - obj } else { f64::INFINITY };
        if step < tol {
            converged = true;
            break;
        }
        f = transported_fit(base, &featurizer, xt, &ys_hot, &classes, &plan, thr_weights, Some(&f))?;
    }
    Ok(JdotResult { predictor: f, objective_trace: trace, iterations, plan, plan_predictor, converged, nondecreasing })
}

#[derive(Debug, Clone)]
pub struct LabelPropResult {
    pub predictions: PredictionSet,
    /// Target rows that received no transported mass and got uniform labels.
    pub zero_mass: Vec<usize>,
    pub converged: bool,
}

/// Propagates source labels to the target through a transport plan with
/// uniform marginals: exact when `reg` is `None`, Sinkhorn otherwise.
/// `classes` is the declared label set, sorted, and must cover `ys`.
#[allow(clippy::too_many_arguments)]
pub fn ot_label_prop(
    xs: &DMatrix<f64>,
    ys: &[i64],
    xt: &DMatrix<f64>,
    classes: &[i64],
    metric: Metric,
    reg: Option<f64>,
    n_iter_max: usize,
) -> Result<LabelPropResult> {
    if xs.nrows() != ys.len() {
        return Err(Error::LengthMismatch(xs.nrows(), ys.len()));
    }
    if classes.len() < 2 || classes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParam(format!("class set {classes:?}")));
    }
    let c = cost_matrix(xs, xt, metric, CostNorm::None)?.c;
    let (a, b) = (uniform(xs.nrows()), uniform(xt.nrows()));
    let plan = match reg {
        None => exact_ot_plan(&c, &a, &b)?,
        Some(r) => sinkhorn_plan(&c, &a, &b, r, 1e-9, n_iter_max)?,
    };
    let mut p = plan.gamma.transpose() * one_hot(ys, classes)?;
    let mut zero_mass = Vec::new();
    let k = classes.len() as f64;
    for (t, mut row) in p.row_iter_mut().enumerate() {
        let s = row.sum();
        if s > 1e-300 && s.is_finite() {
            row /= s;
        } else {
            row.fill(1.0 / k);
            zero_mass.push(t);
        }
    }
    Ok(LabelPropResult { predictions: PredictionSet::new(p, classes.to_vec())?, zero_mass, converged: plan.converged })
}

#[derive(Debug, Clone)]
pub struct DasvmResult {
    pub predictor: ProbPredictor,
    pub iterations: usize,
    /// Labeled pool size (kept source plus pseudo-labeled target) per fit.
    pub pool_sizes: Vec<usize>,
    /// Sources still in the pool at the end.
    pub residual_source: usize,
    pub converged: bool,
}

/// Orders candidates by decreasing confidence `|p − 0.5|`, ties by index.
fn by_confidence(idx: &mut [usize], p1: &[f64]) {
    idx.sort_by(|&i, &j| {
        let (ci, cj) = ((p1[i] - 0.5).abs(), (p1[j] - 0.5).abs());
        cj.partial_cmp(&ci).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
}

/// Self-labeling adaptation for binary problems. Each round moves the most
/// confident unlabeled targets into the labeled pool with pseudo-labels,
/// balanced across predicted classes, and drops as many of the least
/// confident sources.
pub fn dasvm_fit(
    xs: &DMatrix<f64>,
    ys: &[i64],
    xt: &DMatrix<f64>,
    max_iter: usize,
    step_fraction: f64,
    base: &EstimatorSpec,
) -> Result<DasvmResult> {
    if xs.nrows() != ys.len() {
        return Err(Error::LengthMismatch(xs.nrows(), ys.len()));
    }
    let classes = source_classes(ys)?;
    if classes.len() != 2 {
        return Err(Error::NotBinary);
    }
    if !(step_fraction > 0.0 && step_fraction <= 1.0) {
        return Err(Error::InvalidParam(format!("step_fraction {step_fraction}")));
    }
    let (ns, nt) = (xs.nrows(), xt.nrows());
    let joint = vstack(xs, xt);
    let featurizer = Featurizer::new(base, &joint)?;
    let step = ((step_fraction * nt as f64).ceil() as usize).max(1);

    let mut source_kept: Vec<usize> = (0..ns).collect();
    let mut added: Vec<usize> = Vec::new();
    let mut pseudo: Vec<i64> = vec![classes[0]; nt];
    let mut unlabeled: Vec<usize> = (0..nt).collect();
    let mut pool_sizes = Vec::new();
    let mut model: Option<ProbPredictor> = None;
    let mut iterations = 0;
    let mut converged = false;

    let fit_pool = |kept: &[usize], added: &[usize], pseudo: &[i64], init: Option<&ProbPredictor>| {
        if kept.len() + added.len() == 0 {
            return Err(Error::EmptyPool);
        }
        let mut rows: Vec<usize> = kept.to_vec();
        rows.extend(added.iter().map(|&t| ns + t));
        let mut y: Vec<i64> = select(ys, kept);
        y.extend(added.iter().map(|&t| pseudo[t]));
        let q = one_hot(&y, &classes)?;
        fit_soft(base, featurizer.clone(), &select_rows(&joint, &rows), &q, &classes, None, init)
    };

    while iterations < max_iter {
        let f = fit_pool(&source_kept, &added, &pseudo, model.as_ref())?;
        pool_sizes.push(source_kept.len() + added.len());
        iterations += 1;
        let pt = f.predict_proba(xt)?.probabilities.column(1).iter().copied().collect::<Vec<_>>();
        let mut changed = false;
        for &t in &added {
            let label = if pt[t] > 0.5 { classes[1] } else { classes[0] };
            changed |= label != pseudo[t];
            pseudo[t] = label;
        }
        let budget = step.min(source_kept.len()).min(unlabeled.len());
        if budget == 0 {
            // sources exhausted or every target labeled
            converged = !changed || source_kept.is_empty();
            model = Some(f);
            break;
        }
        // balanced selection across predicted classes
        let mut per_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for &t in &unlabeled {
            per_class[usize::from(pt[t] > 0.5)].push(t);
        }
        for group in per_class.iter_mut() {
            by_confidence(group, &pt);
        }
        let mut chosen = Vec::with_capacity(budget);
        let (mut heads, mut turn) = ([0usize, 0usize], 0usize);
        while chosen.len() < budget {
            let g = &per_class[turn];
            if heads[turn] < g.len() {
                chosen.push(g[heads[turn]]);
                heads[turn] += 1;
            } else if heads[1 - turn] >= per_class[1 - turn].len() {
                break;
            }
            turn = 1 - turn;
        }
        for &t in &chosen {
            pseudo[t] = if pt[t] > 0.5 { classes[1] } else { classes[0] };
        }
        unlabeled.retain(|t| !chosen.contains(t));
        added.extend(chosen.iter().copied());
        added.sort_unstable();

        let ps = f.predict_proba(xs)?.probabilities.column(1).iter().copied().collect::<Vec<_>>();
        let mut order = source_kept.clone();
        by_confidence(&mut order, &ps);
        let drop: Vec<usize> = order.iter().rev().take(chosen.len()).copied().collect();
        source_kept.retain(|i| !drop.contains(i));
        model = Some(f);
    }

    let last = match model {
        Some(m) => m,
        None => fit_pool(&source_kept, &added, &pseudo, None)?,
    };
    // final predictor: every target with the last pseudo-labels plus residual sources
    let labels = last.predict(xt)?;
    let all: Vec<usize> = (0..nt).collect();
    let predictor = match fit_pool(&source_kept, &all, &labels, Some(&last)) {
        Ok(p) => p,
        Err(Error::SingleClass) => last,
        Err(e) => return Err(e),
    };
    Ok(DasvmResult { predictor, iterations, pool_sizes, residual_source: source_kept.len(), converged })
}
