//! Discrete optimal transport: cost matrices, exact plans by network simplex,
//! log-stabilized Sinkhorn, and class-regularized entropic transport.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{logsumexp, sq_dists};

/// Largest `n_s · n_t` accepted by the exact solver.
pub const MAX_EXACT_CELLS: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sqeuclidean,
    Cosine,
    Cityblock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostNorm {
    Median,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub c: DMatrix<f64>,
    pub metric: Metric,
    pub norm: CostNorm,
}

pub fn cost_matrix(xs: &DMatrix<f64>, xt: &DMatrix<f64>, metric: Metric, norm: CostNorm) -> Result<CostMatrix> {
    if xs.ncols() != xt.ncols() {
        return Err(Error::LengthMismatch(xs.ncols(), xt.ncols()));
    }
    let mut c = match metric {
        Metric::Sqeuclidean => sq_dists(xs, xt),
        Metric::Cityblock => DMatrix::from_fn(xs.nrows(), xt.nrows(), |i, j| (xs.row(i) - xt.row(j)).abs().sum()),
        Metric::Cosine => {
            let ns: Vec<f64> = xs.row_iter().map(|r| r.norm()).collect();
            let nt: Vec<f64> = xt.row_iter().map(|r| r.norm()).collect();
            let dots = xs * xt.transpose();
            DMatrix::from_fn(xs.nrows(), xt.nrows(), |i, j| {
                let den = ns[i] * nt[j];
                let cos = if den > 0.0 { dots[(i, j)] / den } else { 0.0 };
                (1.0 - cos).max(0.0)
            })
        }
    };
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("cost matrix"));
    }
    if norm == CostNorm::Median {
        let mut all: Vec<f64> = c.iter().copied().collect();
        let mid = all.len() / 2;
        let (_, med, _) = all.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
        let med = *med;
        if med > 0.0 {
            c /= med;
        }
    }
    Ok(CostMatrix { c, metric, norm })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub gamma: DMatrix<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl TransportPlan {
    pub fn cost(&self, c: &DMatrix<f64>) -> f64 {
        self.gamma.component_mul(c).sum()
    }

    /// Largest absolute deviation of row and column sums from the marginals.
    pub fn marginal_error(&self) -> f64 {
        let mut err = 0.0f64;
        for (i, row) in self.gamma.row_iter().enumerate() {
            err = err.max((row.sum() - self.a[i]).abs());
        }
        for (j, col) in self.gamma.column_iter().enumerate() {
            err = err.max((col.sum() - self.b[j]).abs());
        }
        err
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_marginals(c: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != c.nrows() {
        return Err(Error::LengthMismatch(a.len(), c.nrows()));
    }
    if b.len() != c.ncols() {
        return Err(Error::LengthMismatch(b.len(), c.ncols()));
    }
    if a.iter().chain(b).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::NonFiniteInput("marginals"));
    }
    let diff = a.iter().sum::<f64>() - b.iter().sum::<f64>();
    if diff.abs() > 1e-9 {
        return Err(Error::Unbalanced(diff));
    }
    Ok(())
}

/// Spanning-tree state of the network simplex.
struct Network<'a> {
    c: &'a DMatrix<f64>,
    m: usize,
    n: usize,
    art_cost: f64,
    tail: Vec<usize>,
    head: Vec<usize>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    pi: Vec<f64>,
}

impl<'a> Network<'a> {
    fn n_real(&self) -> usize {
        self.m * self.n
    }

    fn root(&self) -> usize {
        self.m + self.n
    }

    fn arc_ends(&self, e: usize) -> (usize, usize) {
        if e < self.n_real() {
            (e / self.n, self.m + e % self.n)
        } else {
            (self.tail[e - self.n_real()], self.head[e - self.n_real()])
        }
    }

    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.n_real() {
            self.c[(e / self.n, e % self.n)]
        } else {
            self.art_cost
        }
    }

    fn reduced_cost(&self, e: usize) -> f64 {
        let (u, v) = self.arc_ends(e);
        self.arc_cost(e) - self.pi[u] + self.pi[v]
    }

    /// Recomputes parents, depths and potentials by walking the tree.
    fn rebuild(&mut self) {
        let root = self.root();
        let nodes = root + 1;
        let mut stack = vec![root];
        let mut seen = vec![false; nodes];
        seen[root] = true;
        self.depth[root] = 0;
        self.pi[root] = 0.0;
        self.parent[root] = usize::MAX;
        while let Some(x) = stack.pop() {
            for k in 0..self.adj[x].len() {
                let e = self.adj[x][k];
                let (u, v) = self.arc_ends(e);
                let y = if u == x { v } else { u };
                if seen[y] {
                    continue;
                }
                seen[y] = true;
                self.parent[y] = x;
                self.parent_arc[y] = e;
                self.depth[y] = self.depth[x] + 1;
                // zero reduced cost on tree arcs: cost - pi[tail] + pi[head] = 0
                let ce = self.arc_cost(e);
                self.pi[y] = if u == x { self.pi[x] - ce } else { self.pi[x] + ce };
                stack.push(y);
            }
        }
    }

    fn remove_adj(&mut self, node: usize, e: usize) {
        let pos = self.adj[node].iter().position(|&a| a == e).expect("tree arc missing");
        self.adj[node].swap_remove(pos);
    }

    /// One pivot on entering arc `e`, using the strongly feasible leaving rule.
    fn pivot(&mut self, e: usize) {
        let (u, v) = self.arc_ends(e);
        let (mut x, mut y) = (u, v);
        let mut climb_u = Vec::new();
        let mut climb_v = Vec::new();
        while x != y {
            if self.depth[x] >= self.depth[y] {
                climb_u.push(x);
                x = self.parent[x];
            } else {
                climb_v.push(y);
                y = self.parent[y];
            }
        }
        // traversal from the apex along the orientation of `e`
        let mut cycle: Vec<(usize, bool)> = Vec::with_capacity(climb_u.len() + climb_v.len() + 1);
        for &node in climb_u.iter().rev() {
            let a = self.parent_arc[node];
            let forward = self.arc_ends(a).1 == node;
            cycle.push((a, forward));
        }
        cycle.push((e, true));
        for &node in &climb_v {
            let a = self.parent_arc[node];
            let forward = self.arc_ends(a).0 == node;
            cycle.push((a, forward));
        }
        let mut theta = f64::INFINITY;
        for &(a, fwd) in &cycle {
            if !fwd {
                theta = theta.min(self.flow[a]);
            }
        }
        let mut leaving = usize::MAX;
        for &(a, fwd) in &cycle {
            if !fwd && self.flow[a] <= theta {
                leaving = a;
            }
        }
        for &(a, fwd) in &cycle {
            if fwd {
                self.flow[a] += theta;
            } else {
                self.flow[a] -= theta;
            }
        }
        self.flow[leaving] = 0.0;
        if leaving == e {
            return;
        }
        let (lu, lv) = self.arc_ends(leaving);
        // the endpoint of `e` below the leaving arc roots the detached subtree
        let leaving_on_u_side = cycle[..climb_u.len()].iter().any(|&(a, _)| a == leaving);
        self.remove_adj(lu, leaving);
        self.remove_adj(lv, leaving);
        self.in_tree[leaving] = false;
        self.adj[u].push(e);
        self.adj[v].push(e);
        self.in_tree[e] = true;
        let (start, from) = if leaving_on_u_side { (u, v) } else { (v, u) };
        self.rehang(start, from, e);
    }

    /// Re-attaches the subtree containing `start` below `from` through `arc`
    /// and refreshes its parents, depths and potentials.
    fn rehang(&mut self, start: usize, from: usize, arc: usize) {
        let mut stack = vec![(start, from, arc)];
        while let Some((x, p, pa)) = stack.pop() {
            self.parent[x] = p;
            self.parent_arc[x] = pa;
            self.depth[x] = self.depth[p] + 1;
            let (tu, _) = self.arc_ends(pa);
            let ce = self.arc_cost(pa);
            self.pi[x] = if tu == p { self.pi[p] - ce } else { self.pi[p] + ce };
            for k in 0..self.adj[x].len() {
                let a = self.adj[x][k];
                if a == pa {
                    continue;
                }
                let (au, av) = self.arc_ends(a);
                stack.push((if au == x { av } else { au }, x, a));
            }
        }
    }
}

/// Exact optimal plan by the network simplex method.
pub fn exact_ot_plan(c: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Result<TransportPlan> {
    let (m, n) = c.shape();
    if m * n > MAX_EXACT_CELLS {
        return Err(Error::TooLarge(m, n));
    }
    check_marginals(c, a, b)?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("cost matrix"));
    }
    let nodes = m + n + 1;
    let root = m + n;
    let max_c = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let art_cost = (max_c + 1.0) * (m + n) as f64;
    let mut tail = Vec::with_capacity(m + n);
    let mut head = Vec::with_capacity(m + n);
    let mut flow = vec![0.0; m * n + m + n];
    let mut in_tree = vec![false; m * n + m + n];
    let mut adj = vec![Vec::new(); nodes];
    // artificial star: zero-flow arcs point toward the root
    for node in 0..m + n {
        let supply = if node < m { a[node] } else { -b[node - m] };
        let e = m * n + node;
        if supply >= 0.0 {
            tail.push(node);
            head.push(root);
            flow[e] = supply;
        } else {
            tail.push(root);
            head.push(node);
            flow[e] = -supply;
        }
        in_tree[e] = true;
        adj[node].push(e);
        adj[root].push(e);
    }
    let mut net = Network {
        c,
        m,
        n,
        art_cost,
        tail,
        head,
        flow,
        in_tree,
        adj,
        parent: vec![usize::MAX; nodes],
        parent_arc: vec![usize::MAX; nodes],
        depth: vec![0; nodes],
        pi: vec![0.0; nodes],
    };
    net.rebuild();

    let n_arcs = m * n + m + n;
    let block = ((n_arcs as f64).sqrt().ceil() as usize).max(10).min(n_arcs);
    let eps = 1e-12 * max_c.max(1.0);
    let mut next = 0usize;
    let mut iterations = 0usize;
    loop {
        // block search pricing
        let mut best = usize::MAX;
        let mut best_rc = -eps;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        while scanned < n_arcs {
            let e = next;
            next = if next + 1 == n_arcs { 0 } else { next + 1 };
            scanned += 1;
            in_block += 1;
            if !net.in_tree[e] {
                let rc = net.reduced_cost(e);
                if rc < best_rc {
                    best_rc = rc;
                    best = e;
                }
            }
            if in_block == block {
                if best != usize::MAX {
                    break;
                }
                in_block = 0;
            }
        }
        if best == usize::MAX {
            break;
        }
        net.pivot(best);
        iterations += 1;
    }

    let art_flow: f64 = (m * n..n_arcs).map(|e| net.flow[e]).sum();
    if art_flow > 1e-9 {
        return Err(Error::Unbalanced(art_flow));
    }
    let mut gamma = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let f = net.flow[i * n + j];
            if f > 0.0 {
                gamma[(i, j)] = f;
            }
        }
    }
    Ok(TransportPlan { gamma, a: a.to_vec(), b: b.to_vec(), converged: true, iterations })
}

/// Largest violation of dual feasibility for potentials `(u, v)`:
/// `max(0, max_ij (u_i + v_j − C_ij))`.
pub fn dual_violation(c: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            worst = worst.max(u[i] + v[j] - c[(i, j)]);
        }
    }
    worst
}

/// Recovers dual potentials from the support of an optimal plan.
pub fn plan_potentials(c: &DMatrix<f64>, plan: &TransportPlan) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = c.shape();
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    let tol = 1e-15;
    let mut changed = true;
    // seed each connected component of the support
    while u.iter().any(|x| x.is_nan()) || v.iter().any(|x| x.is_nan()) {
        if !changed {
            if let Some(i) = u.iter().position(|x| x.is_nan()) {
                u[i] = 0.0;
            } else if let Some(j) = v.iter().position(|x| x.is_nan()) {
                // a column with no support: smallest reduced cost keeps feasibility
                v[j] = (0..m).map(|i| c[(i, j)] - u[i]).fold(f64::INFINITY, f64::min);
            }
        }
        changed = false;
        for i in 0..m {
            for j in 0..n {
                if plan.gamma[(i, j)] > tol {
                    if !u[i].is_nan() && v[j].is_nan() {
                        v[j] = c[(i, j)] - u[i];
                        changed = true;
                    } else if u[i].is_nan() && !v[j].is_nan() {
                        u[i] = c[(i, j)] - v[j];
                        changed = true;
                    }
                }
            }
        }
    }
    (u, v)
}

const ABSORB_LIMIT: f64 = 1e50;

/// Entropic plan by Sinkhorn scaling with log-domain absorption of large
/// scaling factors into the dual potentials.
pub fn sinkhorn_plan(c: &DMatrix<f64>, a: &[f64], b: &[f64], reg: f64, tol: f64, max_iter: usize) -> Result<TransportPlan> {
    check_marginals(c, a, b)?;
    if !(reg > 0.0) {
        return Err(Error::InvalidParam(format!("entropic regularization {reg}")));
    }
    let (m, n) = c.shape();
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];

    // log-domain half steps; used at start and whenever scaling breaks down
    let log_update = |f: &mut Vec<f64>, g: &mut Vec<f64>| {
        for i in 0..m {
            let lse = logsumexp((0..n).map(|j| (g[j] - c[(i, j)]) / reg));
            f[i] = if a[i] > 0.0 { reg * (log_a[i] - lse) } else { -1e300 };
        }
        for j in 0..n {
            let lse = logsumexp((0..m).map(|i| (f[i] - c[(i, j)]) / reg));
            g[j] = if b[j] > 0.0 { reg * (log_b[j] - lse) } else { -1e300 };
        }
    };
    let kernel = |f: &[f64], g: &[f64]| DMatrix::from_fn(m, n, |i, j| ((f[i] + g[j] - c[(i, j)]) / reg).exp());

    log_update(&mut f, &mut g);
    let mut k = kernel(&f, &g);
    let mut u = nalgebra::DVector::from_element(m, 1.0);
    let mut v = nalgebra::DVector::from_element(n, 1.0);
    let mut converged = false;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let kv = &k * &v;
        let mut ok = true;
        for i in 0..m {
            u[i] = if a[i] > 0.0 { a[i] / kv[i] } else { 0.0 };
            ok &= u[i].is_finite();
        }
        let ktu = k.tr_mul(&u);
        for j in 0..n {
            v[j] = if b[j] > 0.0 { b[j] / ktu[j] } else { 0.0 };
            ok &= v[j].is_finite();
        }
        let big = u.amax().max(v.amax()) > ABSORB_LIMIT;
        if !ok || big {
            if ok {
                for i in 0..m {
                    if u[i] > 0.0 {
                        f[i] += reg * u[i].ln();
                    }
                }
                for j in 0..n {
                    if v[j] > 0.0 {
                        g[j] += reg * v[j].ln();
                    }
                }
            }
            log_update(&mut f, &mut g);
            k = kernel(&f, &g);
            u.fill(1.0);
            v.fill(1.0);
        }
        if it % 10 == 0 || it == max_iter {
            let kv = &k * &v;
            let err = (0..m).map(|i| (u[i] * kv[i] - a[i]).abs()).fold(0.0, f64::max);
            if err <= tol {
                converged = true;
                break;
            }
        }
    }
    let gamma = DMatrix::from_fn(m, n, |i, j| u[i] * k[(i, j)] * v[j]);
    if gamma.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged);
    }
    Ok(TransportPlan { gamma, a: a.to_vec(), b: b.to_vec(), converged, iterations: it })
}

/// Smoothing of the group-sparsity subgradient at zero group mass.
pub const LPL1_EPS: f64 = 1e-12;

fn class_index(ys: &[i64]) -> (Vec<usize>, usize) {
    let mut classes = ys.to_vec();
    classes.sort_unstable();
    classes.dedup();
    (ys.iter().map(|y| classes.binary_search(y).unwrap()).collect(), classes.len())
}

fn group_mass(gamma: &DMatrix<f64>, idx: &[usize], n_classes: usize) -> DMatrix<f64> {
    let mut mass = DMatrix::zeros(n_classes, gamma.ncols());
    for i in 0..gamma.nrows() {
        for j in 0..gamma.ncols() {
            mass[(idx[i], j)] += gamma[(i, j)];
        }
    }
    mass
}

/// Entropic objective with the `ℓ_{1/2,1}` class-group penalty.
pub fn class_reg_objective(c: &DMatrix<f64>, gamma: &DMatrix<f64>, ys: &[i64], reg_e: f64, reg_cl: f64) -> f64 {
    let (idx, k) = class_index(ys);
    let mass = group_mass(gamma, &idx, k);
    let transport = gamma.component_mul(c).sum();
    let entropy: f64 = gamma.iter().filter(|&&g| g > 0.0).map(|&g| g * (g.ln() - 1.0)).sum();
    let penalty: f64 = mass.iter().map(|&s| (s + LPL1_EPS).sqrt()).sum();
    transport + reg_e * entropy + reg_cl * penalty
}

#[allow(clippy::too_many_arguments)]
pub fn class_reg_ot_plan(
    c: &DMatrix<f64>,
    ys: &[i64],
    a: &[f64],
    b: &[f64],
    reg_e: f64,
    reg_cl: f64,
    max_iter: usize,
    max_inner_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    if ys.len() != c.nrows() {
        return Err(Error::LengthMismatch(ys.len(), c.nrows()));
    }
    let (idx, k) = class_index(ys);
    let mut penalty = DMatrix::zeros(c.nrows(), c.ncols());
    let mut best: Option<(f64, TransportPlan)> = None;
    for _ in 0..max_iter.max(1) {
        let plan = sinkhorn_plan(&(c + &penalty * reg_cl), a, b, reg_e, tol, max_inner_iter)?;
        let obj = class_reg_objective(c, &plan.gamma, ys, reg_e, reg_cl);
        if let Some((prev, _)) = &best {
            if obj > *prev + 1e-9 {
                break;
            }
        }
        let mass = group_mass(&plan.gamma, &idx, k);
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                penalty[(i, j)] = 0.5 / (mass[(idx[i], j)] + LPL1_EPS).sqrt();
            }
        }
        best = Some((obj, plan));
    }
    Ok(best.unwrap().1)
}

/// Plan-weighted average of target points for each source row.
pub fn barycentric_map(plan: &TransportPlan, xt: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if plan.gamma.ncols() != xt.nrows() {
        return Err(Error::LengthMismatch(plan.gamma.ncols(), xt.nrows()));
    }
    let mut out = &plan.gamma * xt;
    for i in 0..out.nrows() {
        let mass = plan.gamma.row(i).sum();
        if !(mass > 0.0) {
            return Err(Error::ZeroRowMass(i));
        }
        out.row_mut(i).scale_mut(1.0 / mass);
    }
    Ok(out)
}
