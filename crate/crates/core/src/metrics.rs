use crate::dataset::MASKED;
use crate::error::{Error, Result};

pub fn accuracy(y_true: &[i64], y_pred: &[i64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.contains(&MASKED) {
        return Err(Error::MaskedLabels);
    }
    if y_true.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Unweighted mean of per-class F1 over `classes`, or over the observed
/// labels when no class set is declared. A class with no true and no
/// predicted samples scores 0.
pub fn macro_f1(y_true: &[i64], y_pred: &[i64], classes: Option<&[i64]>) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.contains(&MASKED) {
        return Err(Error::MaskedLabels);
    }
    let classes: Vec<i64> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let mut c: Vec<i64> = y_true.iter().chain(y_pred).copied().collect();
            c.sort_unstable();
            c.dedup();
            c
        }
    };
    if classes.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let mut total = 0.0;
    for &c in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fneg = 0usize;
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fneg;
        if denom > 0 {
            total += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(total / classes.len() as f64)
}
