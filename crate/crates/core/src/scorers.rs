//! Model-selection criteria. Every scorer is oriented so that higher is
//! better; only the supervised scorer reads target labels.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{PredictionSet, MASKED};
use crate::error::{Error, Result};
use crate::estimators::floored_ln;
use crate::metrics::accuracy;
use crate::reweight::{discriminative_ratio, domain_classifier_spec, DomainClassifier, SampleWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScorerId {
    Supervised,
    #[serde(rename = "IW")]
    Iw,
    #[serde(rename = "DEV")]
    Dev,
    #[serde(rename = "PE")]
    Pe,
    #[serde(rename = "SND")]
    Snd,
    CircV,
    MixVal,
}

impl ScorerId {
    pub const ALL: [ScorerId; 7] =
        [ScorerId::Supervised, ScorerId::Iw, ScorerId::Dev, ScorerId::Pe, ScorerId::Snd, ScorerId::CircV, ScorerId::MixVal];

    /// Unsupervised scorers in tie-break order.
    pub const TIE_ORDER: [ScorerId; 6] =
        [ScorerId::CircV, ScorerId::Iw, ScorerId::MixVal, ScorerId::Pe, ScorerId::Dev, ScorerId::Snd];

    pub fn name(&self) -> &'static str {
        match self {
            ScorerId::Supervised => "Supervised",
            ScorerId::Iw => "IW",
            ScorerId::Dev => "DEV",
            ScorerId::Pe => "PE",
            ScorerId::Snd => "SND",
            ScorerId::CircV => "CircV",
            ScorerId::MixVal => "MixVal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|id| id.name().eq_ignore_ascii_case(s))
    }

    pub fn is_supervised(&self) -> bool {
        *self == ScorerId::Supervised
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerValue {
    pub value: f64,
    pub scorer_id: ScorerId,
    /// Set when the value came from a fallback or a degenerate case.
    pub flag: Option<String>,
}

impl ScorerValue {
    fn new(scorer_id: ScorerId, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFiniteInput("score"));
        }
        Ok(Self { value, scorer_id, flag: None })
    }

    fn flagged(mut self, why: impl Into<String>) -> Self {
        self.flag = Some(why.into());
        self
    }
}

pub const SND_TEMPERATURE: f64 = 0.05;
pub const MIXVAL_LAMBDA: f64 = 0.55;

pub fn score_supervised(pred: &PredictionSet, y_target_val: &[i64]) -> Result<ScorerValue> {
    if y_target_val.contains(&MASKED) {
        return Err(Error::MaskedLabels);
    }
    ScorerValue::new(ScorerId::Supervised, accuracy(y_target_val, &pred.labels())?)
}

fn check_weights(pred: &PredictionSet, y: &[i64], w: &[f64]) -> Result<()> {
    if pred.len() != y.len() {
        return Err(Error::LengthMismatch(pred.len(), y.len()));
    }
    if w.len() != y.len() {
        return Err(Error::LengthMismatch(w.len(), y.len()));
    }
    if y.contains(&MASKED) {
        return Err(Error::MaskedLabels);
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) || !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(())
}

/// Importance-weighted accuracy on labeled source validation samples.
pub fn score_iw(pred_source_val: &PredictionSet, y_source_val: &[i64], w_val: &SampleWeights) -> Result<ScorerValue> {
    let w = &w_val.values;
    check_weights(pred_source_val, y_source_val, w)?;
    let hits = pred_source_val.labels();
    let num: f64 = w.iter().zip(hits.iter().zip(y_source_val)).filter(|(_, (a, b))| a == b).map(|(w, _)| w).sum();
    ScorerValue::new(ScorerId::Iw, num / w.iter().sum::<f64>())
}

/// Deep embedded validation risk with the 0/1 loss, negated. The control
/// variate coefficient is `η = −cov(wL, w) / var(w)`.
pub fn score_dev(pred_source_val: &PredictionSet, y_source_val: &[i64], w_val: &SampleWeights) -> Result<ScorerValue> {
    let w = &w_val.values;
    check_weights(pred_source_val, y_source_val, w)?;
    let n = w.len() as f64;
    let labels = pred_source_val.labels();
    let wl: Vec<f64> = (0..w.len()).map(|i| if labels[i] == y_source_val[i] { 0.0 } else { w[i] }).collect();
    let mw = w.iter().sum::<f64>() / n;
    let mwl = wl.iter().sum::<f64>() / n;
    // without weight variance the control variate is undefined; use the
    // importance-weighted risk instead
    let fallback = |why: &str| -> Result<ScorerValue> {
        let iw = score_iw(pred_source_val, y_source_val, w_val)?.value;
        Ok(ScorerValue::new(ScorerId::Dev, iw - 1.0)?.flagged(why))
    };
    if w.len() < 2 {
        return fallback("single weight, IW fallback");
    }
    let var = w.iter().map(|v| (v - mw).powi(2)).sum::<f64>() / (n - 1.0);
    if var < 1e-12 {
        return fallback("constant weights, IW fallback");
    }
    let cov = wl.iter().zip(w).map(|(a, b)| (a - mwl) * (b - mw)).sum::<f64>() / (n - 1.0);
    let eta = -cov / var;
    let risk = mwl + eta * mw - eta;
    ScorerValue::new(ScorerId::Dev, -risk)
}

/// Negated mean Shannon entropy of the predicted distributions.
pub fn score_pe(pred_target_val: &PredictionSet) -> Result<ScorerValue> {
    let p = &pred_target_val.probabilities;
    if p.nrows() == 0 {
        return Err(Error::TooFewSamples(0));
    }
    let h: f64 = p.iter().map(|&v| -v * floored_ln(v)).sum::<f64>() / p.nrows() as f64;
    ScorerValue::new(ScorerId::Pe, -h)
}

/// Soft neighborhood density: mean entropy of the temperature softmax over
/// cosine similarities to the other predictions. The diagonal is excluded.
pub fn score_snd(pred_target_val: &PredictionSet, tau: f64) -> Result<ScorerValue> {
    let p = &pred_target_val.probabilities;
    let n = p.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParam(format!("temperature {tau}")));
    }
    let mut u = p.clone();
    for (i, mut row) in u.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm > 0.0) {
            return Err(Error::DegenerateRows(i));
        }
        row /= norm;
    }
    let s = &u * u.transpose() / tau;
    let mut total = 0.0;
    for i in 0..n {
        let m = (0..n).filter(|&j| j != i).map(|j| s[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).filter(|&j| j != i).map(|j| (s[(i, j)] - m).exp()).sum();
        let lz = z.ln();
        // entropy of softmax: −Σ q log q with log q = s − m − log z
        let h: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let lq = s[(i, j)] - m - lz;
                -lq.exp() * lq
            })
            .sum();
        total += h;
    }
    ScorerValue::new(ScorerId::Snd, total / n as f64)
}

/// Circular validation. `forward_target` are the forward model's labels on
/// the target; `backward` refits the same method with the target (with those
/// labels) as source and the unlabeled source as target, and returns its
/// labels for the source. The value is their accuracy against `ys`.
pub fn score_circv<F>(forward_target: &[i64], ys: &[i64], backward: F) -> Result<ScorerValue>
where
    F: FnOnce(&[i64]) -> Result<Vec<i64>>,
{
    if ys.contains(&MASKED) {
        return Err(Error::MaskedLabels);
    }
    if forward_target.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let first = forward_target[0];
    if forward_target.iter().all(|&v| v == first) {
        // a backward model trained on one class predicts that class everywhere
        let constant = vec![first; ys.len()];
        return Ok(ScorerValue::new(ScorerId::CircV, accuracy(ys, &constant)?)?.flagged("single pseudo-label class"));
    }
    match backward(forward_target) {
        Ok(pred) => ScorerValue::new(ScorerId::CircV, accuracy(ys, &pred)?),
        Err(e) => Ok(ScorerValue::new(ScorerId::CircV, 0.0)?.flagged(format!("backward fit failed: {e}"))),
    }
}

/// Mixed-sample probing on the target. Pairs come from a seeded shuffle; a
/// mixed point `λx_i + (1 − λ)x_j` carries the pseudo-label of `x_i`. The value
/// averages the consistency on same-label and different-label pairs.
pub fn score_mixval<F>(predict: F, xt_val: &DMatrix<f64>, lambda: f64, seed: u64) -> Result<ScorerValue>
where
    F: Fn(&DMatrix<f64>) -> Result<Vec<i64>>,
{
    if !(lambda > 0.5 && lambda < 1.0) {
        return Err(Error::InvalidParam(format!("mixing weight {lambda}")));
    }
    let n = xt_val.nrows();
    if n < 4 {
        return Err(Error::TooFewSamples(n));
    }
    let labels = predict(xt_val)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mixed = DMatrix::from_fn(n, xt_val.ncols(), |i, k| lambda * xt_val[(i, k)] + (1.0 - lambda) * xt_val[(perm[i], k)]);
    let mixed_pred = predict(&mixed)?;
    let (mut same, mut diff) = ((0usize, 0usize), (0usize, 0usize));
    for i in 0..n {
        let hit = usize::from(mixed_pred[i] == labels[i]);
        if labels[i] == labels[perm[i]] {
            same = (same.0 + hit, same.1 + 1);
        } else {
            diff = (diff.0 + hit, diff.1 + 1);
        }
    }
    let rate = |(h, c): (usize, usize)| if c > 0 { Some(h as f64 / c as f64) } else { None };
    match (rate(same), rate(diff)) {
        (Some(a), Some(b)) => ScorerValue::new(ScorerId::MixVal, 0.5 * (a + b)),
        (Some(a), None) => Ok(ScorerValue::new(ScorerId::MixVal, a)?.flagged("no inter-cluster pairs")),
        (None, Some(b)) => Ok(ScorerValue::new(ScorerId::MixVal, b)?.flagged("no intra-cluster pairs")),
        (None, None) => Err(Error::TooFewSamples(n)),
    }
}

/// Discriminative density-ratio weights for the source validation rows,
/// from a logistic domain classifier trained on the validation sets.
pub fn validation_weights(xs_val: &DMatrix<f64>, xt_val: &DMatrix<f64>) -> Result<SampleWeights> {
    let pooled = crate::dataset::vstack(xs_val, xt_val);
    let spec = domain_classifier_spec(DomainClassifier::Lr, &pooled)?;
    SampleWeights::from_ratios(discriminative_ratio(&spec, xs_val, xt_val, xs_val)?)
}
