//! Two-dimensional simulated datasets for the four shift regimes.
//!
//! Source layout: class 0 is a large sheared disc, class 1 is four small
//! Gaussian blobs around it. The subspace regime uses a separate layout
//! (one blob against two) whose diagonal flip keeps the classes separable
//! only along the anti-diagonal direction.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::DomainDataset;
use crate::error::{Error, Result};

/// Frozen generator constants. Bump [`CONSTANTS_VERSION`] whenever any of
/// them changes so cached benchmark records are invalidated.
pub mod constants {
    pub const CONSTANTS_VERSION: u32 = 1;

    /// Default noise standard deviation per shift kind, calibrated against the
    /// no-adaptation and target-oracle anchors with the kernel base model.
    pub const NOISE_COVARIATE: f64 = 0.5;
    pub const NOISE_TARGET: f64 = 0.8;
    pub const NOISE_CONDITIONAL: f64 = 0.8;
    pub const NOISE_SUBSPACE: f64 = 0.5;

    pub const DISC_SHEAR: [[f64; 2]; 2] = [[2.0, -0.5], [-0.5, 2.0]];
    pub const DISC_CENTER: [f64; 2] = [2.0, 2.0];
    /// (row-multiplied covariance factor, center) for the four class-1 blobs.
    pub const SATELLITES: [([[f64; 2]; 2], [f64; 2]); 4] = [
        ([[0.15, 0.0], [0.0, 0.3]], [-1.5, 3.0]),
        ([[0.2, -0.1], [-0.1, 0.2]], [-0.5, 1.0]),
        ([[0.17, -0.05], [-0.05, 0.17]], [1.0, -0.4]),
        ([[0.3, 0.0], [0.0, 0.15]], [3.0, -1.0]),
    ];

    pub const COV_POOL_FACTOR: usize = 100;
    pub const COV_CENTER: [f64; 2] = [0.0, 2.0];
    pub const COV_GAMMA: f64 = 2.0;

    pub const TARGET_CLASS0_RATIO: f64 = 0.9;

    pub const COND_SCALE: f64 = 0.7;
    pub const COND_SHIFT: f64 = 1.0;

    pub const SUB_MAIN: (f64, [f64; 2]) = (0.5, [-1.0, 1.0]);
    pub const SUB_BLOBS: [(f64, [f64; 2]); 2] = [(0.1, [1.5, 0.5]), (0.2, [-0.5, -1.5])];
}

use constants::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Covariate,
    Target,
    Conditional,
    Subspace,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 4] = [ShiftKind::Covariate, ShiftKind::Target, ShiftKind::Conditional, ShiftKind::Subspace];

    pub fn id(&self) -> &'static str {
        match self {
            ShiftKind::Covariate => "cov",
            ShiftKind::Target => "tar",
            ShiftKind::Conditional => "cond",
            ShiftKind::Subspace => "sub",
        }
    }

    pub fn default_noise(&self) -> f64 {
        match self {
            ShiftKind::Covariate => NOISE_COVARIATE,
            ShiftKind::Target => NOISE_TARGET,
            ShiftKind::Conditional => NOISE_CONDITIONAL,
            ShiftKind::Subspace => NOISE_SUBSPACE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimShiftSpec {
    pub kind: ShiftKind,
    pub n_source: usize,
    pub n_target: usize,
    pub noise: f64,
    /// Target class proportions, used by the target-shift regime only.
    pub label_proportions: Option<Vec<f64>>,
    pub seed: u64,
}

impl SimShiftSpec {
    pub fn new(kind: ShiftKind, n: usize, seed: u64) -> Self {
        Self { kind, n_source: n, n_target: n, noise: kind.default_noise(), label_proportions: None, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n_source < 20 || self.n_target < 20 {
            return Err(Error::InvalidSpec("each domain needs at least 20 samples".into()));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidSpec("noise must be positive".into()));
        }
        if let Some(p) = &self.label_proportions {
            if p.len() != 2 || p.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidSpec("label proportions must be a binary simplex vector".into()));
            }
        }
        Ok(())
    }
}

struct Points {
    x: Vec<[f64; 2]>,
    y: Vec<i64>,
}

fn normal2(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// Row vector times 2x2 matrix plus offset.
fn affine(v: [f64; 2], m: &[[f64; 2]; 2], c: &[f64; 2]) -> [f64; 2] {
    [v[0] * m[0][0] + v[1] * m[1][0] + c[0], v[0] * m[0][1] + v[1] * m[1][1] + c[1]]
}

/// Main layout with `n_large` disc points and `n_small` points per satellite.
fn main_layout(n_large: usize, n_small: usize, rng: &mut ChaCha8Rng) -> Points {
    let mut x = Vec::with_capacity(n_large + 4 * n_small);
    let mut y = Vec::with_capacity(n_large + 4 * n_small);
    for _ in 0..n_large {
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let r = rng.random::<f64>().sqrt();
        x.push(affine([r * angle.cos(), r * angle.sin()], &DISC_SHEAR, &DISC_CENTER));
        y.push(0);
    }
    for (sigma, mu) in SATELLITES.iter() {
        for _ in 0..n_small {
            x.push(affine(normal2(rng), sigma, mu));
            y.push(1);
        }
    }
    Points { x, y }
}

fn main_counts(n: usize) -> (usize, usize) {
    let small = n / 8;
    (n - 4 * small, small)
}

fn subspace_layout(n: usize, rng: &mut ChaCha8Rng) -> Points {
    let small = n / 4;
    let large = n - 2 * small;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let (s, mu) = SUB_MAIN;
    for _ in 0..large {
        let z = normal2(rng);
        x.push([z[0] * s + mu[0], z[1] * s + mu[1]]);
        y.push(0);
    }
    for (s, mu) in SUB_BLOBS.iter() {
        for _ in 0..small {
            let z = normal2(rng);
            x.push([z[0] * s + mu[0], z[1] * s + mu[1]]);
            y.push(1);
        }
    }
    Points { x, y }
}

/// Weighted sampling of `k` distinct indices (exponential-key method).
fn weighted_without_replacement(w: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut keys: Vec<(f64, usize)> = w
        .iter()
        .enumerate()
        .map(|(i, &wi)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let key = if wi > 0.0 { u.ln() / wi } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = keys.into_iter().take(k).map(|p| p.1).collect();
    idx.sort_unstable();
    idx
}

fn uniform_without_replacement(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

pub fn make_shift_dataset(spec: &SimShiftSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (source, mut target) = match spec.kind {
        ShiftKind::Subspace => {
            let s = subspace_layout(spec.n_source, &mut rng);
            let mut t = subspace_layout(spec.n_target, &mut rng);
            for p in t.x.iter_mut() {
                p.swap(0, 1);
            }
            (s, t)
        }
        ShiftKind::Covariate => {
            let (l, s) = main_counts(spec.n_source);
            let src = main_layout(l, s, &mut rng);
            let (l, s) = main_counts(spec.n_target * COV_POOL_FACTOR);
            let pool = main_layout(l, s, &mut rng);
            let w: Vec<f64> = pool
                .x
                .iter()
                .map(|p| (-COV_GAMMA * ((p[0] - COV_CENTER[0]).powi(2) + (p[1] - COV_CENTER[1]).powi(2))).exp())
                .collect();
            let idx = weighted_without_replacement(&w, spec.n_target, &mut rng);
            let t = Points { x: idx.iter().map(|&i| pool.x[i]).collect(), y: idx.iter().map(|&i| pool.y[i]).collect() };
            (src, t)
        }
        ShiftKind::Target => {
            let (l, s) = main_counts(spec.n_source);
            let src = main_layout(l, s, &mut rng);
            let (l, s) = main_counts(spec.n_target * 3);
            let pool = main_layout(l, s, &mut rng);
            let p0 = spec.label_proportions.as_ref().map(|p| p[0]).unwrap_or(TARGET_CLASS0_RATIO);
            let n0 = ((spec.n_target as f64) * p0).floor() as usize;
            let n1 = spec.n_target - n0;
            let c0: Vec<usize> = (0..pool.y.len()).filter(|&i| pool.y[i] == 0).collect();
            let c1: Vec<usize> = (0..pool.y.len()).filter(|&i| pool.y[i] == 1).collect();
            if n0 > c0.len() || n1 > c1.len() {
                return Err(Error::InvalidSpec("label proportions exceed the sampling pool".into()));
            }
            let mut idx = uniform_without_replacement(&c0, n0, &mut rng);
            idx.extend(uniform_without_replacement(&c1, n1, &mut rng));
            let t = Points { x: idx.iter().map(|&i| pool.x[i]).collect(), y: idx.iter().map(|&i| pool.y[i]).collect() };
            (src, t)
        }
        ShiftKind::Conditional => {
            let (l, s) = main_counts(spec.n_source);
            let src = main_layout(l, s, &mut rng);
            let (l, s) = main_counts(spec.n_target);
            let mut t = main_layout(l, s, &mut rng);
            for p in t.x.iter_mut() {
                p[0] = p[0] * COND_SCALE + COND_SHIFT;
                p[1] = p[1] * COND_SCALE + COND_SHIFT;
            }
            (src, t)
        }
    };
    let mut source = source;
    for p in source.x.iter_mut().chain(target.x.iter_mut()) {
        p[0] += spec.noise * rng.sample::<f64, _>(StandardNormal);
        p[1] += spec.noise * rng.sample::<f64, _>(StandardNormal);
    }

    let ns = source.x.len();
    let n = ns + target.x.len();
    let features = DMatrix::from_fn(n, 2, |i, j| if i < ns { source.x[i][j] } else { target.x[i - ns][j] });
    let mut labels = source.y;
    labels.extend(target.y);
    let domain: Vec<i32> = (0..n).map(|i| if i < ns { 1 } else { -2 }).collect();
    DomainDataset::new(features, labels, domain, format!("sim_{}", spec.kind.id()), spec.kind.id())
}
