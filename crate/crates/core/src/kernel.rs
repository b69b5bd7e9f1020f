//! RBF bandwidth conventions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gamma {
    Value(f64),
    /// `1 / d`.
    Auto,
    /// `1 / (d · var(X))` with the variance taken over all entries.
    Scale,
    /// `1 / median(‖x − x′‖²)` over a seeded subsample of pairs.
    Median,
}

const MEDIAN_PAIRS: usize = 500;
const MEDIAN_SEED: u64 = 0x5eed;

impl Gamma {
    pub fn resolve(&self, x: &DMatrix<f64>) -> Result<f64> {
        let d = x.ncols() as f64;
        let g = match *self {
            Gamma::Value(g) => g,
            Gamma::Auto => 1.0 / d,
            Gamma::Scale => {
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    1.0 / (d * var)
                } else {
                    1.0
                }
            }
            Gamma::Median => median_heuristic(x),
        };
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidParam(format!("kernel gamma {g}")));
        }
        Ok(g)
    }
}

fn median_heuristic(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(MEDIAN_SEED);
    let mut d2 = Vec::with_capacity(MEDIAN_PAIRS);
    for _ in 0..MEDIAN_PAIRS {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        d2.push((x.row(i) - x.row(j)).norm_squared());
    }
    d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = d2[d2.len() / 2];
    if med > 0.0 {
        1.0 / med
    } else {
        1.0
    }
}
