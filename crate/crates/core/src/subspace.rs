//! Shared-subspace methods: joint PCA, subspace alignment, transfer component
//! analysis and transfer subspace learning.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{center, column_means, covariance, rbf_gram, sq_dists, sym_eigen};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionKind {
    /// `(x − center) · basis`, shared by both domains.
    Linear { center: DVector<f64>, basis: DMatrix<f64> },
    /// Per-domain bases; source rows are additionally multiplied by `aligner`.
    Aligned {
        source_center: DVector<f64>,
        source_basis: DMatrix<f64>,
        aligner: DMatrix<f64>,
        target_center: DVector<f64>,
        target_basis: DMatrix<f64>,
    },
    /// `k(x, train) · coef`.
    Kernel { train: DMatrix<f64>, gamma: f64, coef: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub kind: ProjectionKind,
    /// Set when the requested dimension was reduced to the numerical rank.
    pub warning: Option<String>,
}

impl Projection {
    pub fn dim(&self) -> usize {
        match &self.kind {
            ProjectionKind::Linear { basis, .. } => basis.ncols(),
            ProjectionKind::Aligned { target_basis, .. } => target_basis.ncols(),
            ProjectionKind::Kernel { coef, .. } => coef.ncols(),
        }
    }

    pub fn project(&self, x: &DMatrix<f64>, side: Side) -> Result<DMatrix<f64>> {
        let check = |d: usize| if x.ncols() == d { Ok(()) } else { Err(Error::LengthMismatch(x.ncols(), d)) };
        match &self.kind {
            ProjectionKind::Linear { center: c, basis } => {
                check(c.len())?;
                Ok(center(x, c) * basis)
            }
            ProjectionKind::Aligned { source_center, source_basis, aligner, target_center, target_basis } => match side {
                Side::Source => {
                    check(source_center.len())?;
                    Ok(center(x, source_center) * source_basis * aligner)
                }
                Side::Target => {
                    check(target_center.len())?;
                    Ok(center(x, target_center) * target_basis)
                }
            },
            ProjectionKind::Kernel { train, gamma, coef } => {
                check(train.ncols())?;
                Ok(rbf_gram(x, train, *gamma) * coef)
            }
        }
    }
}

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

fn pca_parts(x: &DMatrix<f64>, k: usize) -> Result<(DVector<f64>, DMatrix<f64>, Option<String>)> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let k_valid = k.min(d).min(n - 1);
    if k_valid == 0 {
        return Err(Error::InvalidParam("number of components must be positive".into()));
    }
    let mu = column_means(x);
    let (vals, vecs) = sym_eigen(&covariance(x, true))?;
    let top = vals[0].max(0.0);
    let rank = if top > 0.0 { vals.iter().filter(|&&v| v > RANK_TOL * top).count() } else { 0 };
    if rank == 0 {
        return Err(Error::RankDeficient { requested: k_valid, rank: 0 });
    }
    let mut warning = None;
    let kept = if k_valid > rank {
        warning = Some(format!("requested {k_valid} components but the numerical rank is {rank}"));
        rank
    } else {
        k_valid
    };
    Ok((mu, vecs.columns(0, kept).clone_owned(), warning))
}

/// Top principal directions of `x`. `k` is clipped to `min(d, n − 1)` and
/// then to the numerical rank.
pub fn pca_basis(x: &DMatrix<f64>, k: usize) -> Result<Projection> {
    let (center, basis, warning) = pca_parts(x, k)?;
    Ok(Projection { kind: ProjectionKind::Linear { center, basis }, warning })
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::LengthMismatch(a.ncols(), b.ncols()));
    }
    Ok(crate::dataset::vstack(a, b))
}

pub type Adapted = (DMatrix<f64>, DMatrix<f64>, Projection);

fn finish(xs: &DMatrix<f64>, xt: &DMatrix<f64>, p: Projection) -> Result<Adapted> {
    Ok((p.project(xs, Side::Source)?, p.project(xt, Side::Target)?, p))
}

pub fn jpca_adapt(xs: &DMatrix<f64>, xt: &DMatrix<f64>, k: usize) -> Result<Adapted> {
    let p = pca_basis(&stack(xs, xt)?, k)?;
    finish(xs, xt, p)
}

pub fn sa_adapt(xs: &DMatrix<f64>, xt: &DMatrix<f64>, k: usize) -> Result<Adapted> {
    if xs.ncols() != xt.ncols() {
        return Err(Error::LengthMismatch(xs.ncols(), xt.ncols()));
    }
    let k = k.min(xs.nrows().saturating_sub(1)).min(xt.nrows().saturating_sub(1));
    let (mus, ps, ws) = pca_parts(xs, k)?;
    let (mut_, pt, wt) = pca_parts(xt, k)?;
    let kept = ps.ncols().min(pt.ncols());
    let ps = ps.columns(0, kept).clone_owned();
    let pt = pt.columns(0, kept).clone_owned();
    let aligner = ps.transpose() * &pt;
    let p = Projection {
        kind: ProjectionKind::Aligned { source_center: mus, source_basis: ps, aligner, target_center: mut_, target_basis: pt },
        warning: ws.or(wt),
    };
    finish(xs, xt, p)
}

/// Transfer components for one `mu`; any prefix of the stored coefficient
/// columns is the solution for that number of components.
#[derive(Debug, Clone)]
pub struct TcaBasis {
    pub train: DMatrix<f64>,
    pub gamma: f64,
    pub eigenvalues: DVector<f64>,
    pub coef: DMatrix<f64>,
}

impl TcaBasis {
    pub fn new(xs: &DMatrix<f64>, xt: &DMatrix<f64>, mu: f64, gamma: f64, k_max: usize) -> Result<Self> {
        if !(mu > 0.0) || !(gamma > 0.0) {
            return Err(Error::InvalidParam("TCA needs mu > 0 and gamma > 0".into()));
        }
        let z = stack(xs, xt)?;
        let (ns, nt) = (xs.nrows(), xt.nrows());
        let m = ns + nt;
        if ns == 0 || nt == 0 {
            return Err(Error::TooFewSamples(ns.min(nt)));
        }
        let k = rbf_gram(&z, &z, gamma);
        // L = e eᵀ, so K L K + μI = μ (I + c u uᵀ) with v = K e
        let e = DVector::from_fn(m, |i, _| if i < ns { 1.0 / ns as f64 } else { -1.0 / nt as f64 });
        let v = &k * e;
        let vnorm2 = v.norm_squared();
        let c = vnorm2 / mu;
        let mut b_inv_half = DMatrix::identity(m, m);
        if vnorm2 > 0.0 {
            let coeff = (1.0 + c).powf(-0.5) - 1.0;
            b_inv_half += (&v * v.transpose()) * (coeff / vnorm2);
        }
        b_inv_half /= mu.sqrt();
        let k1 = k.column_sum();
        let a = &k * &k - (&k1 * k1.transpose()) / m as f64;
        let s = &b_inv_half * a * &b_inv_half;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::IllConditioned);
        }
        let (vals, vecs) = sym_eigen(&s)?;
        let keep = k_max.min(m - 1).max(1);
        let coef = b_inv_half * vecs.columns(0, keep);
        Ok(Self { train: z, gamma, eigenvalues: vals.rows(0, keep).clone_owned(), coef })
    }

    pub fn projection(&self, k: usize) -> Projection {
        let kept = k.clamp(1, self.coef.ncols());
        let warning = (kept < k).then(|| format!("requested {k} components, {kept} available"));
        Projection {
            kind: ProjectionKind::Kernel { train: self.train.clone(), gamma: self.gamma, coef: self.coef.columns(0, kept).clone_owned() },
            warning,
        }
    }
}

pub fn tca_adapt(xs: &DMatrix<f64>, xt: &DMatrix<f64>, k: usize, mu: f64, gamma: f64) -> Result<Adapted> {
    let p = TcaBasis::new(xs, xt, mu, gamma, k)?.projection(k);
    finish(xs, xt, p)
}

/// Fixed data of the transfer-subspace objective.
struct TslProblem {
    xs: DMatrix<f64>,
    xt: DMatrix<f64>,
    sb: DMatrix<f64>,
    sw: DMatrix<f64>,
    mu: f64,
    h: f64,
}

/// Gaussian overlap `∫ N(z; a, h²) N(z; b, h²) dz` in `k` dimensions for all
/// pairs of projected rows.
fn overlap(za: &DMatrix<f64>, zb: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let k = za.ncols() as f64;
    let norm = (4.0 * std::f64::consts::PI * h * h).powf(-k / 2.0);
    sq_dists(za, zb).map(|d| norm * (-d / (4.0 * h * h)).exp())
}

/// `Σ_ij G_ij (a_i − b_j)(a_i − b_j)ᵀ`.
fn weighted_scatter(a: &DMatrix<f64>, b: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let ra = g.column_sum();
    let rb = g.row_sum().transpose();
    let da = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * ra[i]);
    let db = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * rb[i]);
    let cross = a.transpose() * g * b;
    a.transpose() * da + b.transpose() * db - &cross - cross.transpose()
}

impl TslProblem {
    fn new(xs: &DMatrix<f64>, ys: &[i64], xt: &DMatrix<f64>, mu: f64, h: f64, reg: f64) -> Result<Self> {
        let (n, d) = xs.shape();
        let mean = column_means(xs);
        let mut classes = ys.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::SingleClass);
        }
        let mut sb = DMatrix::zeros(d, d);
        let mut sw = DMatrix::zeros(d, d);
        for c in classes {
            let idx: Vec<usize> = (0..n).filter(|&i| ys[i] == c).collect();
            let xc = crate::dataset::select_rows(xs, &idx);
            let mc = column_means(&xc);
            let diff = &mc - &mean;
            sb += (&diff * diff.transpose()) * (idx.len() as f64 / n as f64);
            let cc = center(&xc, &mc);
            sw += cc.transpose() * cc / n as f64;
        }
        for i in 0..d {
            sw[(i, i)] += reg;
        }
        Ok(Self { xs: xs.clone(), xt: xt.clone(), sb, sw, mu, h })
    }

    /// Objective and Euclidean gradient at an orthonormal `w`.
    fn eval(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let sbw = &self.sb * w;
        let sww = &self.sw * w;
        let num = w.dot(&sbw);
        let den = w.dot(&sww);
        let fisher = num / den;
        let mut grad = (sbw * den - sww * num) * (2.0 / (den * den));
        if self.mu == 0.0 {
            return (fisher, grad);
        }
        let zs = &self.xs * w;
        let zt = &self.xt * w;
        let (ns, nt) = (zs.nrows() as f64, zt.nrows() as f64);
        let gss = overlap(&zs, &zs, self.h);
        let gtt = overlap(&zt, &zt, self.h);
        let gst = overlap(&zs, &zt, self.h);
        let div = gss.sum() / (ns * ns) + gtt.sum() / (nt * nt) - 2.0 * gst.sum() / (ns * nt);
        let scatter = weighted_scatter(&self.xs, &self.xs, &gss) / (ns * ns) + weighted_scatter(&self.xt, &self.xt, &gtt) / (nt * nt)
            - weighted_scatter(&self.xs, &self.xt, &gst) * (2.0 / (ns * nt));
        // d/dW of G(‖δᵀW‖²) is −G δδᵀW / (2h²)
        let div_grad = scatter * w * (-1.0 / (2.0 * self.h * self.h));
        grad -= div_grad * self.mu;
        (fisher - self.mu * div, grad)
    }
}

/// TSL objective and its Euclidean gradient at any `d × k` matrix `w`, on
/// rows used as given (no centering).
#[allow(clippy::too_many_arguments)]
pub fn tsl_objective(
    xs: &DMatrix<f64>,
    ys: &[i64],
    xt: &DMatrix<f64>,
    w: &DMatrix<f64>,
    mu: f64,
    length_scale: f64,
    reg: f64,
) -> Result<(f64, DMatrix<f64>)> {
    if ys.len() != xs.nrows() {
        return Err(Error::LengthMismatch(ys.len(), xs.nrows()));
    }
    if w.nrows() != xs.ncols() || xt.ncols() != xs.ncols() {
        return Err(Error::LengthMismatch(w.nrows(), xs.ncols()));
    }
    Ok(TslProblem::new(xs, ys, xt, mu, length_scale, reg)?.eval(w))
}

fn retract(w: &DMatrix<f64>) -> DMatrix<f64> {
    let q = w.clone().qr().q();
    // fix column signs so the retraction is continuous at the identity
    let mut q = q.columns(0, w.ncols()).clone_owned();
    for j in 0..q.ncols() {
        if q.column(j).dot(&w.column(j)) < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone)]
pub struct TslResult {
    pub projected_source: DMatrix<f64>,
    pub projected_target: DMatrix<f64>,
    pub projection: Projection,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Projection maximizing a Fisher trace ratio on the labeled source minus a
/// kernel density divergence between the projected domains.
#[allow(clippy::too_many_arguments)]
pub fn tsl_adapt(
    xs: &DMatrix<f64>,
    ys: &[i64],
    xt: &DMatrix<f64>,
    k: usize,
    mu: f64,
    length_scale: f64,
    reg: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TslResult> {
    if ys.len() != xs.nrows() {
        return Err(Error::LengthMismatch(ys.len(), xs.nrows()));
    }
    if !(length_scale > 0.0) || !(mu >= 0.0) || !(reg >= 0.0) {
        return Err(Error::InvalidParam("TSL needs length_scale > 0, mu >= 0, reg >= 0".into()));
    }
    let pooled = stack(xs, xt)?;
    let init = pca_basis(&pooled, k)?;
    let (center, mut w, warning) = match init.kind {
        ProjectionKind::Linear { center, basis } => (center, basis, init.warning),
        _ => unreachable!(),
    };
    let problem = TslProblem::new(&self::center(xs, &center), ys, &self::center(xt, &center), mu, length_scale, reg)?;
    let (mut f, mut g) = problem.eval(&w);
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut converged = false;
    for _ in 0..max_iter {
        let sym = {
            let wg = w.transpose() * &g;
            (&wg + wg.transpose()) * 0.5
        };
        let rg = &g - &w * sym;
        let gnorm = rg.norm();
        if gnorm < tol {
            converged = true;
            break;
        }
        let mut t = step / gnorm;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = retract(&(&w + &rg * t));
            let (fc, gc) = problem.eval(&cand);
            if fc.is_finite() && fc >= f {
                accepted = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            converged = true;
            break;
        };
        let gain = fc - f;
        w = cand;
        f = fc;
        g = gc;
        trace.push(f);
        step = (t * gnorm * 2.0).min(1e3);
        if gain < tol * f.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let projection = Projection { kind: ProjectionKind::Linear { center, basis: w }, warning };
    let ps = projection.project(xs, Side::Source)?;
    let pt = projection.project(xt, Side::Target)?;
    Ok(TslResult { projected_source: ps, projected_target: pt, projection, objective_trace: trace, converged })
}
