//! Paired Wilcoxon signed-rank test, Pearson correlation and average ranks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by exact enumeration.
pub const EXACT_MAX_N: usize = 20;
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Gain,
    Drop,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p_value: f64,
    pub significant: bool,
    pub direction: Direction,
    /// Sum of ranks of positive differences `x − y`.
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
    pub exact: bool,
}

/// Average ranks (1-based, ascending) with ties sharing the mean position.
pub fn rank_average(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided paired test on `x − y`. Zero differences are dropped.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], level: f64) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("paired samples"));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = rank_average(&abs);
    let w_plus: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let direction = if w_plus > w_minus {
        Direction::Gain
    } else if w_plus < w_minus {
        Direction::Drop
    } else {
        Direction::None
    };
    if n < MIN_PAIRS {
        return Ok(WilcoxonResult { p_value: 1.0, significant: false, direction: Direction::None, w_plus, n_used: n, exact: false });
    }
    let (p, exact) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w_plus), true)
    } else {
        (normal_p(&ranks, w_plus), false)
    };
    let p_value = p.min(1.0);
    Ok(WilcoxonResult { p_value, significant: p_value < level, direction, w_plus, n_used: n, exact })
}

/// Exact null distribution of `W+` over all sign patterns. Ranks are
/// multiples of one half, so doubled ranks index an integer table.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w = (2.0 * w_plus).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    2.0 * lower.min(upper)
}

fn normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie / 48.0;
    let diff = w_plus - mean;
    let corrected = (diff.abs() - 0.5).max(0.0);
    let z = corrected / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * (1.0 - normal.cdf(z))
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean rank per method over scenarios, rank 1 for the highest score and
/// ties averaged. `table[m][s]` is method `m` on scenario `s`; missing cells
/// share the worst positions of their scenario.
pub fn average_rank(table: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
    let m = table.len();
    if m == 0 {
        return Err(Error::EmptyTable);
    }
    let s = table[0].len();
    if s == 0 {
        return Err(Error::EmptyTable);
    }
    if let Some(row) = table.iter().find(|r| r.len() != s) {
        return Err(Error::LengthMismatch(row.len(), s));
    }
    let mut sums = vec![0.0; m];
    for j in 0..s {
        // descending order: rank the negated scores, missing cells last
        let present: Vec<usize> = (0..m).filter(|&i| table[i][j].is_some_and(f64::is_finite)).collect();
        let neg: Vec<f64> = present.iter().map(|&i| -table[i][j].unwrap()).collect();
        let ranks = rank_average(&neg);
        for (k, &i) in present.iter().enumerate() {
            sums[i] += ranks[k];
        }
        let missing = m - present.len();
        if missing > 0 {
            let worst = (present.len() + 1 + m) as f64 / 2.0;
            for (i, sum) in sums.iter_mut().enumerate() {
                if !present.contains(&i) {
                    *sum += worst;
                }
            }
        }
    }
    Ok(sums.into_iter().map(|v| v / s as f64).collect())
}
