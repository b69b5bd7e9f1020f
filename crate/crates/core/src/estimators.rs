//! Weighted multinomial logistic regression, linear and RBF-kernel, plus the
//! source-only base-estimator grid search.
//!
//! The kernel variant works on Nyström features `K(x, Z) U Λ^{-1/2}` built
//! from a seeded subset `Z` of the training rows, so the squared weight norm
//! equals the RKHS norm of the decision function within span(Z).

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{select, select_rows, PredictionSet};
use crate::error::{Error, Result};
use crate::linalg::{rbf_gram, sym_eigen};
use crate::metrics::accuracy;
use crate::optim::{self, Options};
use crate::split::SplitPlan;

/// Largest number of Nyström support points.
pub const MAX_SUPPORT: usize = 200;
const SUPPORT_SEED: u64 = 17;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Linear { l2: f64 },
    Kernel { gamma: f64, l2: f64 },
}

impl EstimatorSpec {
    pub fn l2(&self) -> f64 {
        match *self {
            EstimatorSpec::Linear { l2 } | EstimatorSpec::Kernel { l2, .. } => l2,
        }
    }

    pub fn is_kernel(&self) -> bool {
        matches!(self, EstimatorSpec::Kernel { .. })
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            EstimatorSpec::Linear { l2 } => l2 > 0.0,
            EstimatorSpec::Kernel { gamma, l2 } => gamma > 0.0 && l2 > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("{self:?}")))
        }
    }
}

/// Input-to-feature map of a fitted predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum Featurizer {
    Identity,
    Nystrom { support: DMatrix<f64>, gamma: f64, proj: DMatrix<f64> },
}

impl Featurizer {
    pub fn new(spec: &EstimatorSpec, x: &DMatrix<f64>) -> Result<Self> {
        match *spec {
            EstimatorSpec::Linear { .. } => Ok(Featurizer::Identity),
            EstimatorSpec::Kernel { gamma, .. } => {
                let n = x.nrows();
                let support = if n <= MAX_SUPPORT {
                    x.clone()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(SUPPORT_SEED);
                    let mut idx = sample(&mut rng, n, MAX_SUPPORT).into_vec();
                    idx.sort_unstable();
                    select_rows(x, &idx)
                };
                let kmm = rbf_gram(&support, &support, gamma);
                if kmm.iter().any(|v| !v.is_finite()) {
                    return Err(Error::GramNotFinite);
                }
                let (vals, vecs) = sym_eigen(&kmm)?;
                let cutoff = 1e-10 * vals[0].max(f64::MIN_POSITIVE);
                let rank = vals.iter().take_while(|&&v| v > cutoff).count().max(1);
                let proj = DMatrix::from_fn(support.nrows(), rank, |i, j| vecs[(i, j)] / vals[j].max(cutoff).sqrt());
                Ok(Featurizer::Nystrom { support, gamma, proj })
            }
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Featurizer::Identity => Ok(x.clone()),
            Featurizer::Nystrom { support, gamma, proj } => {
                if x.ncols() != support.ncols() {
                    return Err(Error::LengthMismatch(x.ncols(), support.ncols()));
                }
                let k = rbf_gram(x, support, *gamma);
                if k.iter().any(|v| !v.is_finite()) {
                    return Err(Error::GramNotFinite);
                }
                Ok(k * proj)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbPredictor {
    pub spec: EstimatorSpec,
    pub classes: Vec<i64>,
    pub featurizer: Featurizer,
    /// Feature-by-class coefficient matrix.
    pub coef: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub converged: bool,
}

impl ProbPredictor {
    pub fn decision(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let phi = self.featurizer.apply(x)?;
        let mut z = phi * &self.coef;
        for mut row in z.row_iter_mut() {
            row += self.intercept.transpose();
        }
        Ok(z)
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<PredictionSet> {
        let z = self.decision(x)?;
        Ok(PredictionSet { probabilities: softmax_rows(&z), classes: self.classes.clone() })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<i64>> {
        Ok(self.predict_proba(x)?.labels())
    }
}

fn softmax_rows(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = z.clone();
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Clamps probabilities at the shared floor before taking logs.
pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Validates weights and rescales them to mean one.
pub fn normalize_weights(w: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    match w {
        None => Ok(vec![1.0; n]),
        Some(w) => {
            if w.len() != n {
                return Err(Error::LengthMismatch(w.len(), n));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NonFiniteInput("sample weights"));
            }
            let mean = w.iter().sum::<f64>() / n as f64;
            if !(mean > 0.0) {
                return Err(Error::DegenerateWeights);
            }
            Ok(w.iter().map(|v| v / mean).collect())
        }
    }
}

/// Weighted soft-label cross-entropy plus `(l2/2)‖coef‖²` and its gradient.
/// `theta` packs the `p × C` coefficients column-major followed by `C`
/// intercepts. Weights must already be mean-one.
pub fn softmax_loss_grad(
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
    w: &[f64],
    l2: f64,
    theta: &[f64],
    grad: &mut [f64],
) -> f64 {
    let (n, p) = phi.shape();
    let c = q.ncols();
    let coef = DMatrix::from_column_slice(p, c, &theta[..p * c]);
    let mut z = phi * &coef;
    for mut row in z.row_iter_mut() {
        for k in 0..c {
            row[k] += theta[p * c + k];
        }
    }
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let m = z.row(i).max();
        let lse = m + z.row(i).iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let qsum: f64 = q.row(i).sum();
        for k in 0..c {
            let logp = z[(i, k)] - lse;
            loss -= w[i] * inv_n * q[(i, k)] * logp;
            // overwrite z with the residual that drives the gradient
            z[(i, k)] = w[i] * inv_n * (logp.exp() * qsum - q[(i, k)]);
        }
    }
    let gcoef = phi.transpose() * &z + &coef * l2;
    grad[..p * c].copy_from_slice(gcoef.as_slice());
    for k in 0..c {
        grad[p * c + k] = z.column(k).sum();
    }
    loss + 0.5 * l2 * coef.norm_squared()
}

fn check_inputs(x: &DMatrix<f64>, n_rows: usize) -> Result<()> {
    if x.nrows() != n_rows {
        return Err(Error::LengthMismatch(x.nrows(), n_rows));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("features"));
    }
    Ok(())
}

/// Fits on pre-computed features with a soft label matrix `q` (rows sum to 1
/// or to 0 for rows that should be ignored). `init` warm-starts the
/// optimizer from a packed parameter vector of matching shape.
pub fn fit_features(
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
    w: &[f64],
    l2: f64,
    init: Option<&[f64]>,
) -> Result<(DMatrix<f64>, DVector<f64>, bool)> {
    let (p, c) = (phi.ncols(), q.ncols());
    let dim = p * c + c;
    let x0 = match init {
        Some(t) if t.len() == dim => t.to_vec(),
        _ => vec![0.0; dim],
    };
    let opts = Options { max_iter: 1000, grad_tol: 1e-6, f_tol: 0.0, history: 10 };
    let res = optim::minimize(|t, g| softmax_loss_grad(phi, q, w, l2, t, g), x0, &opts, |_| true)?;
    let coef = DMatrix::from_column_slice(p, c, &res.x[..p * c]);
    let intercept = DVector::from_column_slice(&res.x[p * c..]);
    if coef.iter().chain(intercept.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Diverged);
    }
    Ok((coef, intercept, res.converged))
}

pub fn pack(pred: &ProbPredictor) -> Vec<f64> {
    let mut v = pred.coef.as_slice().to_vec();
    v.extend(pred.intercept.iter());
    v
}

pub fn one_hot(y: &[i64], classes: &[i64]) -> Result<DMatrix<f64>> {
    let mut q = DMatrix::zeros(y.len(), classes.len());
    for (i, label) in y.iter().enumerate() {
        let k = classes.binary_search(label).map_err(|_| Error::MaskedLabels)?;
        q[(i, k)] = 1.0;
    }
    Ok(q)
}

fn class_set(y: &[i64]) -> Result<Vec<i64>> {
    if y.iter().any(|&v| v < 0) {
        return Err(Error::MaskedLabels);
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    Ok(classes)
}

/// Fits a predictor with soft labels `q` over `classes`, reusing a fixed
/// featurizer. Warm-starts from `init` when given.
pub fn fit_soft(
    spec: &EstimatorSpec,
    featurizer: Featurizer,
    x: &DMatrix<f64>,
    q: &DMatrix<f64>,
    classes: &[i64],
    w: Option<&[f64]>,
    init: Option<&ProbPredictor>,
) -> Result<ProbPredictor> {
    spec.validate()?;
    check_inputs(x, q.nrows())?;
    if classes.len() < 2 || q.ncols() != classes.len() {
        return Err(Error::SingleClass);
    }
    let w = normalize_weights(w, x.nrows())?;
    let phi = featurizer.apply(x)?;
    let init = init.map(pack);
    let (coef, intercept, converged) = fit_features(&phi, q, &w, spec.l2(), init.as_deref())?;
    Ok(ProbPredictor { spec: *spec, classes: classes.to_vec(), featurizer, coef, intercept, converged })
}

pub fn fit(spec: &EstimatorSpec, x: &DMatrix<f64>, y: &[i64], w: Option<&[f64]>) -> Result<ProbPredictor> {
    spec.validate()?;
    check_inputs(x, y.len())?;
    let classes = class_set(y)?;
    let q = one_hot(y, &classes)?;
    let featurizer = Featurizer::new(spec, x)?;
    fit_soft(spec, featurizer, x, &q, &classes, w, None)
}

pub fn fit_linear_logistic(x: &DMatrix<f64>, y: &[i64], w: Option<&[f64]>, l2: f64) -> Result<ProbPredictor> {
    fit(&EstimatorSpec::Linear { l2 }, x, y, w)
}

pub fn fit_kernel_logistic(
    x: &DMatrix<f64>,
    y: &[i64],
    w: Option<&[f64]>,
    gamma: f64,
    l2: f64,
) -> Result<ProbPredictor> {
    fit(&EstimatorSpec::Kernel { gamma, l2 }, x, y, w)
}

fn tie_key(spec: &EstimatorSpec) -> (f64, f64, u8) {
    match *spec {
        EstimatorSpec::Linear { l2 } => (l2, 0.0, 0),
        EstimatorSpec::Kernel { gamma, l2 } => (l2, gamma, 1),
    }
}

/// Returns the candidate with the best mean held-out accuracy over `splits`,
/// using only the given source samples.
pub fn select_base_estimator(
    x: &DMatrix<f64>,
    y: &[i64],
    candidates: &[EstimatorSpec],
    splits: &SplitPlan,
) -> Result<EstimatorSpec> {
    if candidates.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let mut best: Option<(f64, EstimatorSpec)> = None;
    for spec in candidates {
        let mut total = 0.0;
        for (train, test) in &splits.repeats {
            let model = fit(spec, &select_rows(x, train), &select(y, train), None)?;
            let pred = model.predict(&select_rows(x, test))?;
            total += accuracy(&select(y, test), &pred)?;
        }
        let score = total / splits.repeats.len().max(1) as f64;
        let better = match &best {
            None => true,
            Some((s, b)) => {
                score > *s + 1e-12 || ((score - *s).abs() <= 1e-12 && tie_key(spec) < tie_key(b))
            }
        };
        if better {
            best = Some((score, *spec));
        }
    }
    Ok(best.unwrap().1)
}
