//! Dense linear-algebra helpers shared by the methods.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Each eigenvector is signed so that its largest-magnitude
/// coordinate is positive (first such coordinate on ties).
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigSolverFailed);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, 1e-14, 0).ok_or(Error::EigSolverFailed)?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap().then(a.cmp(&b)));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() + 1e-12 {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(k, &col);
    }
    Ok((values, vectors))
}

/// `m^p` for a symmetric PSD matrix through its eigen-decomposition.
/// Negative powers fail when an eigenvalue is not safely positive.
pub fn sym_pow(m: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(m)?;
    let scale = vals.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut d = DVector::zeros(vals.len());
    for (i, &v) in vals.iter().enumerate() {
        if v < -1e-10 * scale {
            return Err(Error::NonPsd);
        }
        if p < 0.0 && v <= 1e-14 * scale {
            return Err(Error::NonPsd);
        }
        d[i] = v.max(0.0).powf(p);
    }
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * d[j]);
    Ok(&scaled * vecs.transpose())
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n)
}

/// Sample covariance (divisor n − 1) or, with `centered == false`, the raw
/// second moment XᵀX / n.
pub fn covariance(x: &DMatrix<f64>, centered: bool) -> DMatrix<f64> {
    let n = x.nrows();
    if centered {
        let mu = column_means(x);
        let xc = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] - mu[j]);
        xc.transpose() * &xc / ((n.max(2) - 1) as f64)
    } else {
        x.transpose() * x / (n.max(1) as f64)
    }
}

pub fn sq_dists(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let na: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let nb: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let mut g = a * b.transpose();
    for j in 0..b.nrows() {
        for i in 0..a.nrows() {
            g[(i, j)] = (na[i] + nb[j] - 2.0 * g[(i, j)]).max(0.0);
        }
    }
    g
}

pub fn rbf_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let mut k = sq_dists(a, b);
    k.apply(|v| *v = (-gamma * *v).exp());
    k
}

pub fn logsumexp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Centers the rows of `x` by `mu`.
pub fn center(x: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mu[j])
}

/// Modified Gram-Schmidt orthonormalization of the columns of `m`, in order.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        for k in 0..j {
            let dot = q.column(k).dot(&q.column(j));
            let qk = q.column(k).clone_owned();
            let mut cj = q.column_mut(j);
            cj.axpy(-dot, &qk, 1.0);
        }
        let norm = q.column(j).norm();
        if norm > 0.0 {
            q.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    q
}
