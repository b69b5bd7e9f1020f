//! Importance weights for source samples.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{select_rows, vstack};
use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorSpec};
use crate::kernel::Gamma;
use crate::linalg::{column_means, covariance, logsumexp, rbf_gram, sq_dists, sym_eigen};

const RATIO_MIN: f64 = 1e-6;
const RATIO_MAX: f64 = 1e6;
const KLIEP_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    pub values: Vec<f64>,
    pub converged: bool,
    /// Free-form diagnostic, e.g. the covariance condition number.
    pub info: Option<String>,
}

impl SampleWeights {
    pub fn uniform(n: usize) -> Self {
        Self { values: vec![1.0; n], converged: true, info: None }
    }

    /// Clips raw ratios to the admissible band and rescales to mean one.
    pub fn from_ratios(ratios: Vec<f64>) -> Result<Self> {
        let clipped: Vec<f64> = ratios
            .into_iter()
            .map(|r| if r.is_nan() { RATIO_MIN } else { r.clamp(RATIO_MIN, RATIO_MAX) })
            .collect();
        Self::mean_one(clipped)
    }

    fn mean_one(mut values: Vec<f64>) -> Result<Self> {
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::DegenerateWeights);
        }
        values.iter_mut().for_each(|v| *v /= mean);
        Ok(Self { values, converged: true, info: None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Value(f64),
    Scott,
    Silverman,
}

impl Bandwidth {
    /// Rule-of-thumb factors follow scikit-learn and are applied to the raw
    /// feature scale.
    pub fn resolve(&self, n: usize, d: usize) -> f64 {
        let (n, d) = (n as f64, d as f64);
        match *self {
            Bandwidth::Value(h) => h,
            Bandwidth::Scott => n.powf(-1.0 / (d + 4.0)),
            Bandwidth::Silverman => (n * (d + 2.0) / 4.0).powf(-1.0 / (d + 4.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainClassifier {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "SVC")]
    Svc,
    #[serde(rename = "XGB")]
    Xgb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioKind {
    Kde { bandwidth: Bandwidth },
    /// `reg = None` is the automatic ridge `1e-6 · trace / d`.
    Gaussian { reg: Option<f64> },
    Discriminative { classifier: DomainClassifier },
    NearestNeighbor { laplace_smoothing: bool },
}

/// Log-density of a Gaussian KDE at each row of `at`.
pub fn kde_log_density(train: &DMatrix<f64>, at: &DMatrix<f64>, h: f64) -> Vec<f64> {
    let d = train.ncols() as f64;
    let n = train.nrows() as f64;
    let d2 = sq_dists(at, train);
    let norm = -n.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * h * h).ln();
    (0..at.nrows())
        .map(|i| logsumexp(d2.row(i).iter().map(|&v| -v / (2.0 * h * h))) + norm)
        .collect()
}

fn ridge_cov(x: &DMatrix<f64>, reg: Option<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mu = column_means(x);
    let mut c = covariance(x, true);
    let d = c.nrows();
    let lam = reg.unwrap_or(1e-6 * c.trace() / d as f64).max(1e-12);
    for i in 0..d {
        c[(i, i)] += lam;
    }
    (mu, c)
}

/// Gaussian log-density and the covariance condition number.
fn gaussian_log_density(x: &DMatrix<f64>, mu: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let d = cov.nrows();
    let chol = cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let l = chol.l();
    let logdet = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
    let (vals, _) = sym_eigen(cov)?;
    let cond = vals[0] / vals[d - 1].max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let diff = DVector::from_fn(d, |j, _| x[(i, j)] - mu[j]);
        let z = chol.solve(&diff);
        let maha = diff.dot(&z);
        out.push(-0.5 * (maha + logdet + d as f64 * (2.0 * std::f64::consts::PI).ln()));
    }
    Ok((out, cond))
}

pub fn domain_classifier_spec(kind: DomainClassifier, pooled: &DMatrix<f64>) -> Result<EstimatorSpec> {
    match kind {
        DomainClassifier::Lr => Ok(EstimatorSpec::Linear { l2: 1e-3 }),
        DomainClassifier::Svc => Ok(EstimatorSpec::Kernel { gamma: Gamma::Scale.resolve(pooled)?, l2: 1e-3 }),
        DomainClassifier::Xgb => Err(Error::Unsupported(
            "XGB domain classifiers are not available; use LR or SVC".into(),
        )),
    }
}

/// `p(target | x) / p(source | x)` at `at` from a domain classifier trained on
/// `xs` versus `xt`, corrected for the domain size ratio.
pub fn discriminative_ratio(
    spec: &EstimatorSpec,
    xs: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    at: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let x = vstack(xs, xt);
    let labels: Vec<i64> = (0..x.nrows()).map(|i| if i < xs.nrows() { 0 } else { 1 }).collect();
    let clf = estimators::fit(spec, &x, &labels, None).map_err(|e| Error::DomainClassifierFailed(e.to_string()))?;
    let p = clf.predict_proba(at)?;
    let prior = xs.nrows() as f64 / xt.nrows() as f64;
    Ok((0..at.nrows())
        .map(|i| {
            let ps = p.probabilities[(i, 0)].max(1e-12);
            let pt = p.probabilities[(i, 1)].max(1e-12);
            prior * pt / ps
        })
        .collect())
}

fn check_dims(xs: &DMatrix<f64>, xt: &DMatrix<f64>) -> Result<()> {
    if xs.ncols() != xt.ncols() {
        return Err(Error::LengthMismatch(xs.ncols(), xt.ncols()));
    }
    if xs.nrows() == 0 || xt.nrows() == 0 {
        return Err(Error::TooFewSamples(0));
    }
    Ok(())
}

pub fn density_ratio_weights(kind: &RatioKind, xs: &DMatrix<f64>, xt: &DMatrix<f64>) -> Result<SampleWeights> {
    check_dims(xs, xt)?;
    match *kind {
        RatioKind::Kde { bandwidth } => {
            let hs = bandwidth.resolve(xs.nrows(), xs.ncols());
            let ht = bandwidth.resolve(xt.nrows(), xt.ncols());
            if !(hs > 0.0 && ht > 0.0) {
                return Err(Error::InvalidParam("bandwidth must be positive".into()));
            }
            let ls = kde_log_density(xs, xs, hs);
            let lt = kde_log_density(xt, xs, ht);
            SampleWeights::from_ratios(lt.iter().zip(&ls).map(|(a, b)| (a - b).exp()).collect())
        }
        RatioKind::Gaussian { reg } => {
            let (mus, cs) = ridge_cov(xs, reg);
            let (mut_, ct) = ridge_cov(xt, reg);
            let (ls, cond_s) = gaussian_log_density(xs, &mus, &cs)?;
            let (lt, cond_t) = gaussian_log_density(xs, &mut_, &ct)?;
            let mut w = SampleWeights::from_ratios(lt.iter().zip(&ls).map(|(a, b)| (a - b).exp()).collect())?;
            w.info = Some(format!("covariance condition numbers: source {cond_s:.3e}, target {cond_t:.3e}"));
            Ok(w)
        }
        RatioKind::Discriminative { classifier } => {
            let spec = domain_classifier_spec(classifier, &vstack(xs, xt))?;
            SampleWeights::from_ratios(discriminative_ratio(&spec, xs, xt, xs)?)
        }
        RatioKind::NearestNeighbor { laplace_smoothing } => {
            let d2 = sq_dists(xt, xs);
            let mut counts = vec![if laplace_smoothing { 1.0 } else { 0.0 }; xs.nrows()];
            for row in d2.row_iter() {
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] < row[best] {
                        best = j;
                    }
                }
                counts[best] += 1.0;
            }
            SampleWeights::from_ratios(counts)
        }
    }
}

/// Mean log of the modeled target density ratio and its gradient in `alpha`.
/// `a` holds kernel values of target points (rows) against centers.
pub fn kliep_objective(a: &DMatrix<f64>, alpha: &DVector<f64>) -> (f64, DVector<f64>) {
    let fitted = a * alpha;
    let n = a.nrows() as f64;
    let obj = fitted.iter().map(|v| v.max(1e-300).ln()).sum::<f64>() / n;
    let inv = fitted.map(|v| 1.0 / v.max(1e-300));
    (obj, a.transpose() * inv / n)
}

pub fn kliep_weights(
    xs: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    gamma: Gamma,
    n_centers: usize,
    tol: f64,
    max_iter: usize,
) -> Result<SampleWeights> {
    check_dims(xs, xt)?;
    let g = gamma.resolve(&vstack(xs, xt))?;
    let nc = n_centers.min(xt.nrows()).max(1);
    let centers = if nc == xt.nrows() {
        xt.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(KLIEP_SEED);
        let mut idx = sample(&mut rng, xt.nrows(), nc).into_vec();
        idx.sort_unstable();
        select_rows(xt, &idx)
    };
    let a = rbf_gram(xt, &centers, g);
    let ks = rbf_gram(xs, &centers, g);
    let b = column_means(&ks);
    // centers invisible from the source cannot carry weight
    let live: Vec<usize> = (0..nc).filter(|&c| b[c] > 1e-300).collect();
    let rows: Vec<usize> = (0..a.nrows()).filter(|&t| live.iter().any(|&c| a[(t, c)] > 0.0)).collect();
    if live.is_empty() || rows.is_empty() {
        return Err(Error::DegenerateKernel);
    }
    // with β_c = α_c b_c the problem is max mean log (Fβ) over the simplex
    let f = DMatrix::from_fn(rows.len(), live.len(), |t, c| a[(rows[t], live[c])] / b[live[c]]);
    let (beta, converged) = simplex_log_likelihood(&f, tol, max_iter);
    let mut alpha = DVector::zeros(nc);
    for (k, &c) in live.iter().enumerate() {
        alpha[c] = beta[k] / b[c];
    }
    let w: Vec<f64> = (&ks * &alpha).iter().copied().collect();
    let mut out = SampleWeights::from_ratios(w)?;
    out.converged = converged;
    Ok(out)
}

/// Maximizes `mean_t log (Fβ)_t` over the probability simplex with a
/// log-barrier Newton method. `max_iter` bounds the total Newton steps.
fn simplex_log_likelihood(f: &DMatrix<f64>, tol: f64, max_iter: usize) -> (DVector<f64>, bool) {
    let (n, k) = f.shape();
    let nf = n as f64;
    let mut beta = DVector::from_element(k, 1.0 / k as f64);
    if k == 1 {
        return (beta, true);
    }
    let eval = |beta: &DVector<f64>, mu: f64| -> f64 {
        let m = f * beta;
        m.iter().map(|v| v.max(1e-300).ln()).sum::<f64>() / nf + mu * beta.iter().map(|v| v.ln()).sum::<f64>() / k as f64
    };
    let mut mu = 1e-2;
    let mut steps = 0;
    let target_gap = tol.max(1e-14) * 1e-2;
    loop {
        loop {
            if steps >= max_iter {
                return (beta, false);
            }
            steps += 1;
            let m = f * &beta;
            let inv = m.map(|v| 1.0 / v.max(1e-300));
            let mut g = f.transpose() * &inv / nf;
            let mut p = {
                let scaled = DMatrix::from_fn(n, k, |t, c| f[(t, c)] * inv[t]);
                scaled.transpose() * &scaled / nf
            };
            for c in 0..k {
                g[c] += mu / (k as f64 * beta[c]);
                p[(c, c)] += mu / (k as f64 * beta[c] * beta[c]);
            }
            // Newton direction on the hyperplane 1ᵀΔ = 0
            let Some(chol) = p.clone().cholesky() else {
                return (beta, false);
            };
            let pg = chol.solve(&g);
            let p1 = chol.solve(&DVector::from_element(k, 1.0));
            let nu = pg.sum() / p1.sum();
            let delta = pg - p1 * nu;
            let decrement = delta.dot(&(&p * &delta));
            if decrement < 1e-12 {
                break;
            }
            let mut t = 1.0f64;
            for c in 0..k {
                if delta[c] < 0.0 {
                    t = t.min(-0.99 * beta[c] / delta[c]);
                }
            }
            let f0 = eval(&beta, mu);
            let slope = g.dot(&delta);
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &beta + &delta * t;
                if cand.iter().all(|&v| v > 0.0) && eval(&cand, mu) >= f0 + 0.25 * t * slope {
                    beta = cand;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if mu <= target_gap {
            break;
        }
        mu *= 0.05;
    }
    let s = beta.sum();
    (beta / s, true)
}

/// KMM quadratic objective `½ wᵀKw − κᵀw`.
pub fn kmm_objective(k: &DMatrix<f64>, kappa: &DVector<f64>, w: &DVector<f64>) -> f64 {
    0.5 * w.dot(&(k * w)) - kappa.dot(w)
}

/// The KMM problem data: source Gram matrix and `κ`.
pub fn kmm_problem(xs: &DMatrix<f64>, xt: &DMatrix<f64>, gamma: f64) -> (DMatrix<f64>, DVector<f64>) {
    let k = rbf_gram(xs, xs, gamma);
    let kst = rbf_gram(xs, xt, gamma);
    let ratio = xs.nrows() as f64 / xt.nrows() as f64;
    let kappa = DVector::from_fn(xs.nrows(), |i, _| ratio * kst.row(i).sum());
    (k, kappa)
}

/// Euclidean projection onto `{0 ≤ w ≤ ub, Σw = total}`.
pub fn project_box_sum(v: &DVector<f64>, ub: f64, total: f64) -> DVector<f64> {
    let sum_at = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, ub)).sum::<f64>();
    let mut lo = v.min() - ub;
    let mut hi = v.max();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.map(|x| (x - tau).clamp(0.0, ub))
}

/// Solves the KMM quadratic program given its data by accelerated projected
/// gradient on `{0 ≤ w ≤ ub, mean(w) = 1}`, starting from the uniform vector.
pub fn kmm_solve(k: &DMatrix<f64>, kappa: &DVector<f64>, ub: f64, tol: f64, max_iter: usize) -> (DVector<f64>, bool) {
    let n = kappa.len();
    let total = n as f64;
    // power iteration for the Lipschitz constant
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lip = 1.0;
    for _ in 0..50 {
        let kv = k * &v;
        lip = kv.norm().max(1e-12);
        v = kv / lip;
    }
    let step = 1.0 / (lip * 1.01);
    let mut w = DVector::from_element(n, 1.0);
    let mut best = w.clone();
    let mut best_obj = kmm_objective(k, kappa, &w);
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    for _ in 0..max_iter {
        let grad = k * &y - kappa;
        let wn = project_box_sum(&(&y - grad * step), ub, total);
        let obj = kmm_objective(k, kappa, &wn);
        let change = (&wn - &w).amax();
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if obj > best_obj {
            // restart momentum when the objective goes up
            y = best.clone();
            w = best.clone();
            t = 1.0;
        } else {
            y = &wn + (&wn - &w) * ((t - 1.0) / tn);
            w = wn;
            t = tn;
            best_obj = obj;
            best = w.clone();
        }
        if change < tol {
            converged = true;
            break;
        }
    }
    (best, converged)
}

pub fn kmm_weights(
    xs: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    gamma: Gamma,
    b: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SampleWeights> {
    check_dims(xs, xt)?;
    if !(b > 1.0) {
        return Err(Error::InvalidParam(format!("KMM bound B = {b} must exceed 1")));
    }
    let g = gamma.resolve(&vstack(xs, xt))?;
    let (k, kappa) = kmm_problem(xs, xt, g);
    let (w, converged) = kmm_solve(&k, &kappa, b, tol, max_iter);
    let mean = w.mean();
    if !(mean > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let values = w.iter().map(|v| (v / mean).clamp(0.0, b)).collect();
    Ok(SampleWeights { values, converged, info: None })
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Quadratic form of the target-shift objective: returns `(M, v)` such that
/// the objective is `βᵀ(M + reg·I)β − 2vᵀβ` up to a constant.
pub fn mmd_target_shift_problem(
    xs: &DMatrix<f64>,
    ys: &[i64],
    xt: &DMatrix<f64>,
    gamma: f64,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<i64>, Vec<usize>)> {
    let mut classes = ys.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let idx: Vec<usize> = ys.iter().map(|y| classes.binary_search(y).unwrap()).collect();
    let c = classes.len();
    let mut counts = vec![0usize; c];
    idx.iter().for_each(|&k| counts[k] += 1);
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(k));
    }
    let kss = rbf_gram(xs, xs, gamma);
    let kst = rbf_gram(xs, xt, gamma);
    let mut m = DMatrix::zeros(c, c);
    let mut v = DVector::zeros(c);
    for i in 0..xs.nrows() {
        for j in 0..xs.nrows() {
            m[(idx[i], idx[j])] += kss[(i, j)];
        }
        v[idx[i]] += kst.row(i).sum();
    }
    for a in 0..c {
        for b in 0..c {
            m[(a, b)] /= (counts[a] * counts[b]) as f64;
        }
        v[a] /= (counts[a] * xt.nrows()) as f64;
    }
    Ok((m, v, classes, counts))
}

pub fn mmd_target_shift_weights(
    xs: &DMatrix<f64>,
    ys: &[i64],
    xt: &DMatrix<f64>,
    gamma: Gamma,
    reg: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SampleWeights> {
    check_dims(xs, xt)?;
    if ys.len() != xs.nrows() {
        return Err(Error::LengthMismatch(ys.len(), xs.nrows()));
    }
    let g = gamma.resolve(&vstack(xs, xt))?;
    let (m, v, classes, counts) = mmd_target_shift_problem(xs, ys, xt, g)?;
    let c = classes.len();
    let mut q = m.clone();
    for i in 0..c {
        q[(i, i)] += reg;
    }
    let (vals, _) = sym_eigen(&q)?;
    let step = 1.0 / (2.0 * vals[0].max(1e-12));
    let n = xs.nrows() as f64;
    let mut beta = DVector::from_fn(c, |k, _| counts[k] as f64 / n);
    let mut converged = false;
    for _ in 0..max_iter {
        let grad = (&q * &beta - &v) * 2.0;
        let nb = project_simplex(&(&beta - grad * step));
        let change = (&nb - &beta).amax();
        beta = nb;
        if change < tol {
            converged = true;
            break;
        }
    }
    let ratios: Vec<f64> = ys
        .iter()
        .map(|y| {
            let k = classes.binary_search(y).unwrap();
            beta[k] / (counts[k] as f64 / n)
        })
        .collect();
    let mut w = SampleWeights::from_ratios(ratios)?;
    w.converged = converged;
    w.info = Some(format!("class proportions {:?}", beta.iter().map(|b| (b * 1e4).round() / 1e4).collect::<Vec<_>>()));
    Ok(w)
}
