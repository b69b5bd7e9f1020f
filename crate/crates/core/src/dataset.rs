//! Labeled two-domain datasets and prediction containers.

use nalgebra::DMatrix;
use crate::error::{Error, Result};

/// Label value for a target sample whose class is hidden.
pub const MASKED: i64 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<i64>,
    /// Positive entries mark source samples, negative entries target samples.
    pub domain: Vec<i32>,
    pub name: String,
    pub shift_id: String,
}

impl DomainDataset {
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<i64>,
        domain: Vec<i32>,
        name: impl Into<String>,
        shift_id: impl Into<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::LengthMismatch(n, labels.len()));
        }
        if domain.len() != n {
            return Err(Error::LengthMismatch(n, domain.len()));
        }
        if features.ncols() == 0 {
            return Err(Error::InvalidDataset("no feature columns".into()));
        }
        if n < 2 {
            return Err(Error::InvalidDataset("fewer than two samples".into()));
        }
        if domain.iter().any(|&d| d == 0) {
            return Err(Error::InvalidDataset("domain id 0 is neither source nor target".into()));
        }
        if !domain.iter().any(|&d| d > 0) || !domain.iter().any(|&d| d < 0) {
            return Err(Error::InvalidDataset("need both source and target samples".into()));
        }
        for (&y, &d) in labels.iter().zip(&domain) {
            if y < MASKED {
                return Err(Error::InvalidDataset(format!("invalid label {y}")));
            }
            if d > 0 && y == MASKED {
                return Err(Error::InvalidDataset("masked label on a source sample".into()));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("features"));
        }
        Ok(Self {
            features,
            labels,
            domain,
            name: name.into(),
            shift_id: shift_id.into(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn source_indices(&self) -> Vec<usize> {
        (0..self.n_samples()).filter(|&i| self.domain[i] > 0).collect()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        (0..self.n_samples()).filter(|&i| self.domain[i] < 0).collect()
    }

    /// Sorted distinct non-masked labels.
    pub fn classes(&self) -> Vec<i64> {
        let mut c: Vec<i64> = self.labels.iter().copied().filter(|&y| y != MASKED).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Copy with every target label replaced by [`MASKED`].
    pub fn masked_target(&self) -> Self {
        let mut out = self.clone();
        for (y, &d) in out.labels.iter_mut().zip(&self.domain) {
            if d < 0 {
                *y = MASKED;
            }
        }
        out
    }
}

pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

pub fn select<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

pub fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let (na, nb) = (a.nrows(), b.nrows());
    DMatrix::from_fn(na + nb, a.ncols(), |i, j| if i < na { a[(i, j)] } else { b[(i - na, j)] })
}

/// Class-probability predictions for a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub probabilities: DMatrix<f64>,
    pub classes: Vec<i64>,
}

impl PredictionSet {
    pub fn new(probabilities: DMatrix<f64>, classes: Vec<i64>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::SingleClass);
        }
        if probabilities.ncols() != classes.len() {
            return Err(Error::LengthMismatch(probabilities.ncols(), classes.len()));
        }
        for (i, row) in probabilities.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidDataset(format!("prediction row {i} is not a distribution")));
            }
        }
        Ok(Self { probabilities, classes })
    }

    pub fn len(&self) -> usize {
        self.probabilities.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-wise argmax, ties resolved toward the lowest class id.
    pub fn labels(&self) -> Vec<i64> {
        self.probabilities
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                self.classes[best]
            })
            .collect()
    }
}
