//! Feature maps that move source samples toward the target domain.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_means, covariance, rbf_gram, sq_dists, sym_pow};
use crate::optim::{self, Options};

/// `x ↦ A x + b` acting on column vectors; rows of a data matrix map to
/// `X Aᵀ + 1 bᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        Self { a: DMatrix::identity(d, d), b: DVector::zeros(d) }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.a.ncols() {
            return Err(Error::LengthMismatch(x.ncols(), self.a.ncols()));
        }
        let mut out = x * self.a.transpose();
        for mut row in out.row_iter_mut() {
            row += self.b.transpose();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoralReg {
    /// Ridge of `1e-6 · trace(C) / d` on each covariance.
    Auto,
    Value(f64),
}

fn second_moment(x: &DMatrix<f64>, centered: bool) -> (DMatrix<f64>, DVector<f64>) {
    if centered {
        (covariance(x, true), column_means(x))
    } else {
        (covariance(x, false), DVector::zeros(x.ncols()))
    }
}

fn ridge(c: &mut DMatrix<f64>, reg: CoralReg) {
    let d = c.nrows();
    let lam = match reg {
        CoralReg::Auto => 1e-6 * c.trace() / d as f64,
        CoralReg::Value(v) => v,
    };
    for i in 0..d {
        c[(i, i)] += lam;
    }
}

fn check_pair(xs: &DMatrix<f64>, xt: &DMatrix<f64>) -> Result<()> {
    if xs.ncols() != xt.ncols() {
        return Err(Error::LengthMismatch(xs.ncols(), xt.ncols()));
    }
    if xs.nrows() < 2 || xt.nrows() < 2 {
        return Err(Error::TooFewSamples(xs.nrows().min(xt.nrows())));
    }
    Ok(())
}

/// Second-order alignment: whiten with the source covariance, recolor with
/// the target covariance.
pub fn coral(xs: &DMatrix<f64>, xt: &DMatrix<f64>, reg: CoralReg, assume_centered: bool) -> Result<AffineMap> {
    check_pair(xs, xt)?;
    let (mut cs, mus) = second_moment(xs, !assume_centered);
    let (mut ct, mut mut_) = second_moment(xt, !assume_centered);
    ridge(&mut cs, reg);
    ridge(&mut ct, reg);
    let a = sym_pow(&ct, 0.5)? * sym_pow(&cs, -0.5).map_err(|_| Error::SingularCovariance)?;
    if assume_centered {
        mut_.fill(0.0);
    }
    let b = &mut_ - &a * mus;
    Ok(AffineMap { a, b })
}

/// Monge map between the Gaussian approximations of both domains.
pub fn linear_ot(xs: &DMatrix<f64>, xt: &DMatrix<f64>, reg: f64, bias: bool) -> Result<AffineMap> {
    check_pair(xs, xt)?;
    let (mut cs, mus) = second_moment(xs, bias);
    let (mut ct, mut_) = second_moment(xt, bias);
    ridge(&mut cs, CoralReg::Value(reg));
    ridge(&mut ct, CoralReg::Value(reg));
    let cs_half = sym_pow(&cs, 0.5)?;
    let cs_inv_half = sym_pow(&cs, -0.5).map_err(|_| Error::SingularCovariance)?;
    let mid = sym_pow(&(&cs_half * &ct * &cs_half), 0.5)?;
    let a = &cs_inv_half * mid * &cs_inv_half;
    let b = if bias { &mut_ - &a * mus } else { DVector::zeros(xs.ncols()) };
    Ok(AffineMap { a, b })
}

/// Applies the displacement of each sample's nearest fitted source point.
pub fn nn_displacement(train: &DMatrix<f64>, mapped: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if train.shape() != mapped.shape() {
        return Err(Error::LengthMismatch(train.nrows(), mapped.nrows()));
    }
    if train.nrows() == 0 {
        return Err(Error::EmptyPool);
    }
    let d2 = sq_dists(x, train);
    let mut out = x.clone();
    for i in 0..x.nrows() {
        let row = d2.row(i);
        let mut nn = 0;
        for j in 1..row.len() {
            if row[j] < row[nn] {
                nn = j;
            }
        }
        let shift = mapped.row(nn) - train.row(nn);
        out.row_mut(i).add_assign(&shift);
    }
    Ok(out)
}

use std::ops::AddAssign;

/// Per-class diagonal location-scale map `x ↦ s_c ⊙ x + t_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationScaleMap {
    pub classes: Vec<i64>,
    /// Row `c` holds the scale of class `classes[c]`.
    pub scale: DMatrix<f64>,
    pub shift: DMatrix<f64>,
    pub converged: bool,
}

impl LocationScaleMap {
    pub fn apply(&self, x: &DMatrix<f64>, y: &[i64]) -> Result<DMatrix<f64>> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch(x.nrows(), y.len()));
        }
        if x.ncols() != self.scale.ncols() {
            return Err(Error::LengthMismatch(x.ncols(), self.scale.ncols()));
        }
        let mut out = x.clone();
        for i in 0..x.nrows() {
            let c = self
                .classes
                .binary_search(&y[i])
                .map_err(|_| Error::InvalidParam(format!("class {} unseen by the map", y[i])))?;
            for j in 0..x.ncols() {
                out[(i, j)] = self.scale[(c, j)] * x[(i, j)] + self.shift[(c, j)];
            }
        }
        Ok(out)
    }
}

/// Fixed data of the location-scale objective.
pub struct MmdLsProblem {
    xs: DMatrix<f64>,
    xt: DMatrix<f64>,
    class_of: Vec<usize>,
    classes: Vec<i64>,
    counts: Vec<usize>,
    q: DVector<f64>,
    gamma: f64,
    reg_m: f64,
    target_term: f64,
}

impl MmdLsProblem {
    pub fn new(xs: &DMatrix<f64>, ys: &[i64], xt: &DMatrix<f64>, gamma: f64, reg_k: f64, reg_m: f64) -> Result<Self> {
        check_pair(xs, xt)?;
        if ys.len() != xs.nrows() {
            return Err(Error::LengthMismatch(ys.len(), xs.nrows()));
        }
        if !(gamma > 0.0) || !(reg_k > 0.0) || !(reg_m >= 0.0) {
            return Err(Error::InvalidParam("location-scale map needs gamma > 0, reg_k > 0, reg_m >= 0".into()));
        }
        let mut classes = ys.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let class_of: Vec<usize> = ys.iter().map(|y| classes.binary_search(y).unwrap()).collect();
        let mut counts = vec![0; classes.len()];
        for &c in &class_of {
            counts[c] += 1;
        }
        let m = xs.nrows();
        // smoothed source weights q = (L + λI)⁻¹ L 1
        let l = rbf_gram(xs, xs, gamma);
        let mut reg_l = l.clone();
        for i in 0..m {
            reg_l[(i, i)] += reg_k;
        }
        let l1 = &l * DVector::from_element(m, 1.0);
        let q = match reg_l.clone().cholesky() {
            Some(ch) => ch.solve(&l1),
            None => reg_l.lu().solve(&l1).ok_or(Error::DegenerateKernel)?,
        };
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateKernel);
        }
        let n = xt.nrows() as f64;
        let target_term = rbf_gram(xt, xt, gamma).sum() / (n * n);
        Ok(Self { xs: xs.clone(), xt: xt.clone(), class_of, classes, counts, q, gamma, reg_m, target_term })
    }

    pub fn n_params(&self) -> usize {
        2 * self.classes.len() * self.xs.ncols()
    }

    /// Identity map: unit scales, zero shifts.
    pub fn initial(&self) -> Vec<f64> {
        let half = self.n_params() / 2;
        let mut p = vec![1.0; half];
        p.extend(vec![0.0; half]);
        p
    }

    fn moved(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.xs.ncols();
        let off = self.classes.len() * d;
        DMatrix::from_fn(self.xs.nrows(), d, |i, j| {
            let c = self.class_of[i];
            theta[c * d + j] * self.xs[(i, j)] + theta[off + c * d + j]
        })
    }

    /// Objective value and gradient at `theta` (scales then shifts, row-major
    /// by class).
    pub fn objective(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (m, d) = self.xs.shape();
        let n = self.xt.nrows();
        let off = self.classes.len() * d;
        let z = self.moved(theta);
        let kzz = rbf_gram(&z, &z, self.gamma);
        let kzt = rbf_gram(&z, &self.xt, self.gamma);
        let q = &self.q;
        let (mf, nf) = (m as f64, n as f64);
        let kq = &kzz * q;
        let self_term = q.dot(&kq) / (mf * mf);
        let cross_row: DVector<f64> = kzt.column_sum();
        let cross_term = 2.0 * q.dot(&cross_row) / (mf * nf);
        let mut value = self_term - cross_term + self.target_term;

        // gradient with respect to each moved point
        let mut gz = DMatrix::zeros(m, d);
        let qk = kzz.map_with_location(|_, j, v| v * q[j]);
        let qk_sum = qk.column_sum();
        let qz = &qk * &z;
        let kt_sum = cross_row.clone();
        let ktx = &kzt * &self.xt;
        for i in 0..m {
            let a = -4.0 * self.gamma * q[i] / (mf * mf);
            let b = 4.0 * self.gamma * q[i] / (mf * nf);
            for j in 0..d {
                gz[(i, j)] = a * (qk_sum[i] * z[(i, j)] - qz[(i, j)]) + b * (kt_sum[i] * z[(i, j)] - ktx[(i, j)]);
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..m {
            let c = self.class_of[i];
            for j in 0..d {
                grad[c * d + j] += gz[(i, j)] * self.xs[(i, j)];
                grad[off + c * d + j] += gz[(i, j)];
            }
        }
        for c in 0..self.classes.len() {
            let w = self.reg_m * self.counts[c] as f64 / mf;
            for j in 0..d {
                let s = theta[c * d + j];
                let t = theta[off + c * d + j];
                value += w * ((s - 1.0).powi(2) + t * t);
                grad[c * d + j] += 2.0 * w * (s - 1.0);
                grad[off + c * d + j] += 2.0 * w * t;
            }
        }
        value
    }

    pub fn to_map(&self, theta: &[f64], converged: bool) -> LocationScaleMap {
        let d = self.xs.ncols();
        let k = self.classes.len();
        LocationScaleMap {
            classes: self.classes.clone(),
            scale: DMatrix::from_fn(k, d, |c, j| theta[c * d + j]),
            shift: DMatrix::from_fn(k, d, |c, j| theta[k * d + c * d + j]),
            converged,
        }
    }
}

/// Fits the class-conditional location-scale map by minimizing the kernel
/// MMD between moved source and target samples.
#[allow(clippy::too_many_arguments)]
pub fn mmd_ls_map(
    xs: &DMatrix<f64>,
    ys: &[i64],
    xt: &DMatrix<f64>,
    gamma: f64,
    reg_k: f64,
    reg_m: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LocationScaleMap> {
    let problem = MmdLsProblem::new(xs, ys, xt, gamma, reg_k, reg_m)?;
    let half = problem.n_params() / 2;
    let opts = Options { max_iter, grad_tol: tol, f_tol: tol * 1e-3, ..Options::default() };
    let min = optim::minimize(|p, g| problem.objective(p, g), problem.initial(), &opts, |p| p[..half].iter().all(|&s| s > 1e-6))?;
    Ok(problem.to_map(&min.x, min.converged))
}
