//! Repeated stratified train/test splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// `(train, test)` index sets, each sorted ascending.
    pub repeats: Vec<(Vec<usize>, Vec<usize>)>,
    pub ratio: f64,
    pub seed: u64,
}

/// Per-class test counts by largest remainder. `ratio` is the train fraction.
fn test_counts(class_sizes: &[(i64, usize)], ratio: f64) -> Vec<usize> {
    let n: usize = class_sizes.iter().map(|c| c.1).sum();
    let total = (n as f64 * (1.0 - ratio)).round() as usize;
    let ideal: Vec<f64> = class_sizes.iter().map(|c| c.1 as f64 * (1.0 - ratio)).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    // class_sizes is sorted by class id, so a stable sort keeps id order on ties
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

pub fn stratified_split(labels: &[i64], ratio: f64, n_repeats: usize, seed: u64) -> Result<SplitPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    let sizes: Vec<(i64, usize)> = classes.iter().zip(&members).map(|(&c, m)| (c, m.len())).collect();
    let counts = test_counts(&sizes, ratio);
    for (&(class, count), &t) in sizes.iter().zip(&counts) {
        if count <= t {
            return Err(Error::ClassTooSmall { class, count });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut repeats = Vec::with_capacity(n_repeats);
    for _ in 0..n_repeats {
        let mut train = Vec::with_capacity(labels.len());
        let mut test = Vec::new();
        for (m, &t) in members.iter().zip(&counts) {
            let mut perm = m.clone();
            perm.shuffle(&mut rng);
            test.extend_from_slice(&perm[..t]);
            train.extend_from_slice(&perm[t..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        repeats.push((train, test));
    }
    Ok(SplitPlan { repeats, ratio, seed })
}
