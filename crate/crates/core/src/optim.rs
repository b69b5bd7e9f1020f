//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub max_iter: usize,
    /// Stop once the gradient infinity-norm drops to this value.
    pub grad_tol: f64,
    /// Stop once one iteration improves the objective by less than
    /// `f_tol · max(1, |f|)`.
    pub f_tol: f64,
    pub history: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self { max_iter: 1000, grad_tol: 1e-6, f_tol: 0.0, history: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which returns the objective and writes the gradient into its
/// second argument. `feasible` can veto trial points during line search.
pub fn minimize<F, P>(mut f: F, x0: Vec<f64>, opts: &Options, feasible: P) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: Fn(&[f64]) -> bool,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged);
    }
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut alpha = vec![0.0; opts.history.max(1)];

    for it in 0..opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol {
            return Ok(Minimum { x, f: fx, iterations: it, converged: true });
        }
        // two-loop recursion
        dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
        for (k, (s, y, rho)) in mem.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha[k] = a;
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
        }
        let h0 = match mem.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / inf_norm(&g).max(1.0),
        };
        dir.iter_mut().for_each(|d| *d *= h0);
        for (k, (s, y, rho)) in mem.iter().enumerate() {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (alpha[k] - b) * si);
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            mem.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi / inf_norm(&g).max(1.0));
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            xn.iter_mut().zip(&x).zip(&dir).for_each(|((t, xi), di)| *t = xi + step * di);
            if feasible(&xn) {
                let fnew = f(&xn, &mut gn);
                if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                    accepted = true;
                    let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
                        if mem.len() == opts.history.max(1) {
                            mem.pop_front();
                        }
                        mem.push_back((s, y, 1.0 / sy));
                    }
                    let improvement = fx - fnew;
                    std::mem::swap(&mut x, &mut xn);
                    std::mem::swap(&mut g, &mut gn);
                    fx = fnew;
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Diverged);
                    }
                    if improvement < opts.f_tol * fx.abs().max(1.0) {
                        let converged = inf_norm(&g) <= opts.grad_tol || opts.f_tol > 0.0;
                        return Ok(Minimum { x, f: fx, iterations: it + 1, converged });
                    }
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            if mem.is_empty() {
                // no descent possible along the gradient: numerically stationary
                let converged = inf_norm(&g) <= opts.grad_tol.max(1e-8);
                return Ok(Minimum { x, f: fx, iterations: it, converged });
            }
            mem.clear();
        }
    }
    let converged = inf_norm(&g) <= opts.grad_tol;
    Ok(Minimum { x, f: fx, iterations: opts.max_iter, converged })
}
