use dabench_core::linalg::{covariance, rbf_gram, sq_dists, sym_eigen};
use dabench_core::subspace::*;
use dabench_core::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn blob(n: usize, d: usize, scales: &[f64], shift: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, j| scales[j] * rng.sample::<f64, _>(StandardNormal) + shift)
}

fn basis_of(p: &Projection) -> DMatrix<f64> {
    match &p.kind {
        ProjectionKind::Linear { basis, .. } => basis.clone(),
        _ => panic!("expected a linear projection"),
    }
}

#[test]
fn pca_finds_dominant_axis() {
    let x = blob(300, 3, &[0.2, 3.0, 0.5], 0.0, 1);
    let b = basis_of(&pca_basis(&x, 1).unwrap());
    assert!(b[(1, 0)].abs() > 0.99);
    assert!(b[(1, 0)] > 0.0);
}

#[test]
fn pca_identical_rows_is_rank_deficient() {
    let x = DMatrix::from_element(10, 3, 2.5);
    assert!(matches!(pca_basis(&x, 2), Err(Error::RankDeficient { .. })));
}

#[test]
fn pca_shrinks_to_numerical_rank_with_warning() {
    let mut x = blob(50, 3, &[1.0, 1.0, 1.0], 0.0, 2);
    for i in 0..50 {
        x[(i, 2)] = x[(i, 0)] + x[(i, 1)];
    }
    let p = pca_basis(&x, 3).unwrap();
    assert_eq!(p.dim(), 2);
    assert!(p.warning.is_some());
}

#[test]
fn pca_reconstruction_error_is_trailing_eigenvalue_sum() {
    let x = blob(80, 5, &[1.0, 2.0, 0.5, 0.3, 1.5], 1.0, 3);
    let p = pca_basis(&x, 2).unwrap();
    let (center, basis) = match &p.kind {
        ProjectionKind::Linear { center, basis } => (center.clone(), basis.clone()),
        _ => unreachable!(),
    };
    let xc = dabench_core::linalg::center(&x, &center);
    let recon = &xc * &basis * basis.transpose();
    let err = (&xc - recon).norm_squared() / 79.0;
    let (vals, _) = sym_eigen(&covariance(&x, true)).unwrap();
    let trailing: f64 = vals.iter().skip(2).sum();
    assert!((err - trailing).abs() < 1e-8);
}

#[test]
fn jpca_full_rank_preserves_distances_and_clips_grid_values() {
    let xs = blob(40, 3, &[1.0, 2.0, 3.0], 0.0, 4);
    let xt = blob(30, 3, &[2.0, 1.0, 0.5], 1.0, 5);
    let (ps, _, p) = jpca_adapt(&xs, &xt, 100).unwrap();
    assert_eq!(p.dim(), 3);
    assert!((sq_dists(&ps, &ps) - sq_dists(&xs, &xs)).amax() < 1e-8);
    for k in [1, 2, 5, 10, 20, 50, 100] {
        assert_eq!(jpca_adapt(&xs, &xt, k).unwrap().2.dim(), k.min(3));
    }
    let (a, b, _) = jpca_adapt(&xs, &xs, 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sa_full_rank_aligner_maps_source_onto_target_basis() {
    let xs = blob(200, 2, &[3.0, 0.7], 0.0, 6);
    let th: f64 = 0.8;
    let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), th.sin(), -th.sin(), th.cos()]);
    let xt = &xs * rot;
    let (aligned, _, p) = sa_adapt(&xs, &xt, 2).unwrap();
    // with k = d the source basis is orthogonal, so Ps·M = Pt
    let (center, pt) = match &p.kind {
        ProjectionKind::Aligned { source_center, target_basis, .. } => (source_center.clone(), target_basis.clone()),
        _ => unreachable!(),
    };
    let expected = dabench_core::linalg::center(&xs, &center) * pt;
    assert!((aligned - expected).amax() < 1e-8);
    let (_, _, same) = sa_adapt(&xs, &xs, 2).unwrap();
    match same.kind {
        ProjectionKind::Aligned { aligner, .. } => assert!((aligner - DMatrix::identity(2, 2)).amax() < 1e-8),
        _ => unreachable!(),
    }
}

fn mmd(a: &DMatrix<f64>, b: &DMatrix<f64>, gamma: f64) -> f64 {
    let (na, nb) = (a.nrows() as f64, b.nrows() as f64);
    rbf_gram(a, a, gamma).sum() / (na * na) + rbf_gram(b, b, gamma).sum() / (nb * nb) - 2.0 * rbf_gram(a, b, gamma).sum() / (na * nb)
}

#[test]
fn tca_identical_domains_embed_identically() {
    let xs = blob(30, 2, &[1.0, 1.0], 0.0, 7);
    let (es, et, _) = tca_adapt(&xs, &xs, 2, 10.0, 0.5).unwrap();
    assert!((es - et).amax() < 1e-6);
}

#[test]
fn tca_reduces_domain_discrepancy() {
    let xs = blob(60, 2, &[1.0, 1.0], 0.0, 8);
    let xt = blob(60, 2, &[1.0, 1.0], 1.5, 9);
    let (es, et, p) = tca_adapt(&xs, &xt, 2, 10.0, 0.5).unwrap();
    // compare with a kernel width matched to the spread of each space
    let scale_in = 1.0 / sq_dists(&xs, &xt).mean();
    let scale_emb = 1.0 / sq_dists(&es, &et).mean().max(1e-300);
    let rel_in = mmd(&xs, &xt, scale_in);
    let rel_emb = mmd(&es, &et, scale_emb);
    assert!(rel_emb <= rel_in, "embedded {rel_emb} input {rel_in}");
    // out-of-sample rows reproduce training embeddings
    assert!((p.project(&xs, Side::Source).unwrap() - es).amax() < 1e-10);
}

fn flda_direction(x: &DMatrix<f64>, y: &[i64], reg: f64) -> nalgebra::DVector<f64> {
    let d = x.ncols();
    let n = x.nrows() as f64;
    let mean = |c: i64| {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        let sub = dabench_core::dataset::select_rows(x, &idx);
        (dabench_core::linalg::column_means(&sub), sub)
    };
    let (m0, x0) = mean(0);
    let (m1, x1) = mean(1);
    let c0 = dabench_core::linalg::center(&x0, &m0);
    let c1 = dabench_core::linalg::center(&x1, &m1);
    let mut sw = (c0.transpose() * c0 + c1.transpose() * c1) / n;
    for i in 0..d {
        sw[(i, i)] += reg;
    }
    let w = sw.lu().solve(&(m1 - m0)).unwrap();
    w.normalize()
}

#[test]
fn tsl_without_divergence_is_fisher_lda() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 200;
    let y: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
    let x = DMatrix::from_fn(n, 3, |i, j| {
        let z: f64 = rng.sample(StandardNormal);
        [2.0, 0.5, 1.0][j] * z + if y[i] == 1 { [0.5, 0.8, -0.3][j] } else { 0.0 }
    });
    let res = tsl_adapt(&x, &y, &x, 1, 0.0, 2.0, 1e-4, 300, 1e-10).unwrap();
    let w = basis_of(&res.projection).column(0).clone_owned();
    let oracle = flda_direction(&x, &y, 1e-4);
    let angle = w.dot(&oracle).abs().min(1.0).acos();
    assert!(angle < 0.05, "angle {angle}");
    for pair in res.objective_trace.windows(2) {
        assert!(pair[1] >= pair[0]);
    }
}

#[test]
fn tsl_objective_is_monotone_with_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 80;
    let y: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
    let xs = DMatrix::from_fn(n, 3, |i, _| rng.sample::<f64, _>(StandardNormal) + y[i] as f64);
    let xt = DMatrix::from_fn(n, 3, |_, j| rng.sample::<f64, _>(StandardNormal) + j as f64);
    let res = tsl_adapt(&xs, &y, &xt, 2, 1.0, 2.0, 1e-4, 300, 1e-4).unwrap();
    for pair in res.objective_trace.windows(2) {
        assert!(pair[1] >= pair[0]);
    }
    let b = basis_of(&res.projection);
    assert!((b.transpose() * &b - DMatrix::identity(2, 2)).amax() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pca_basis_is_orthonormal(n in 5usize..40, d in 1usize..6, k in 1usize..8, seed in 0u64..1000) {
        let x = blob(n, d, &[1.0, 0.5, 2.0, 1.5, 0.1, 0.7], 0.0, seed);
        let p = pca_basis(&x, k).unwrap();
        let b = basis_of(&p);
        prop_assert!(b.ncols() <= k.min(d).min(n - 1));
        prop_assert!((b.transpose() * &b - DMatrix::identity(b.ncols(), b.ncols())).amax() < 1e-8);
    }
}

#[test]
fn tsl_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 30;
    let y: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
    let xs = DMatrix::from_fn(n, 3, |i, _| rng.sample::<f64, _>(StandardNormal) + y[i] as f64);
    let xt = DMatrix::from_fn(25, 3, |_, j| rng.sample::<f64, _>(StandardNormal) + 0.5 * j as f64);
    let w = DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mu in [0.0, 1.0] {
        let (_, g) = tsl_objective(&xs, &y, &xt, &w, mu, 1.5, 1e-3).unwrap();
        let f = |w: &DMatrix<f64>| tsl_objective(&xs, &y, &xt, w, mu, 1.5, 1e-3).unwrap().0;
        let h = 1e-6;
        for k in 0..w.len() {
            let mut p = w.clone();
            p[k] += h;
            let fp = f(&p);
            p[k] -= 2.0 * h;
            let fd = (fp - f(&p)) / (2.0 * h);
            assert!((fd - g[k]).abs() / fd.abs().max(1e-3) < 1e-5, "mu {mu} entry {k}: {fd} vs {}", g[k]);
        }
    }
    assert!(tsl_objective(&xs, &y, &xt, &DMatrix::zeros(2, 1), 1.0, 1.5, 1e-3).is_err());
}
