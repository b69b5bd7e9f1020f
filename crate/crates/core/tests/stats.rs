use dabench_core::stats::*;
use dabench_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-sided p by listing every sign pattern of the ranked differences.
fn brute_force_p(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    // average ranks by counting, independent of the library routine
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&a| {
            let less = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * (le.min(ge) as f64) / total).min(1.0)
}

#[test]
fn identical_samples_give_p_one() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let r = wilcoxon_signed_rank(&x, &x, 0.05).unwrap();
    assert_eq!(r.p_value, 1.0);
    assert_eq!(r.direction, Direction::None);
    assert!(!r.significant);
}

#[test]
fn six_positive_differences() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let y = [0.0; 6];
    let r = wilcoxon_signed_rank(&x, &y, 0.05).unwrap();
    assert!((r.p_value - 2.0 / 64.0).abs() < 1e-15);
    assert!(r.significant);
    assert_eq!(r.direction, Direction::Gain);
    assert!(r.exact);
}

#[test]
fn exact_enumeration_agrees_for_every_n_up_to_twelve() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 5..=12 {
        for trial in 0..20 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 * if trial % 2 == 0 { 1.0 } else { 0.7 }).collect();
            let r = wilcoxon_signed_rank(&x, &y, 0.05).unwrap();
            if r.n_used < MIN_PAIRS {
                assert_eq!(r.p_value, 1.0);
                continue;
            }
            let oracle = brute_force_p(&x, &y);
            assert!((r.p_value - oracle).abs() < 1e-12, "n={n} got {} oracle {oracle}", r.p_value);
        }
    }
}

#[test]
fn too_few_pairs_is_not_significant() {
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 0.05).unwrap();
    assert_eq!((r.p_value, r.direction), (1.0, Direction::None));
}

#[test]
fn large_samples_use_the_normal_approximation() {
    let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1 + 0.1).collect();
    let y = vec![0.0; 30];
    let r = wilcoxon_signed_rank(&x, &y, 0.05).unwrap();
    assert!(!r.exact);
    // W+ = 465, mean 232.5, var 2363.75
    let z: f64 = (465.0 - 232.5 - 0.5) / 2363.75f64.sqrt();
    assert!(r.p_value < 1e-5 && r.p_value > 0.0, "{} vs z {z}", r.p_value);
}

#[test]
fn pearson_closed_forms() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson_r(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 3.0).collect();
    assert!((pearson_r(&x, &y).unwrap() + 1.0).abs() < 1e-12);
    assert!((pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 0.981).abs() < 1e-3);
    assert!(matches!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ZeroVariance)));
}

#[test]
fn average_rank_cases() {
    assert_eq!(average_rank(&[vec![Some(0.9)], vec![Some(0.8)], vec![Some(0.7)]]).unwrap(), vec![1.0, 2.0, 3.0]);
    assert_eq!(average_rank(&[vec![Some(0.9)], vec![Some(0.9)], vec![Some(0.7)]]).unwrap(), vec![1.5, 1.5, 3.0]);
    let table = vec![vec![Some(0.9), Some(0.5)], vec![Some(0.8), Some(0.7)], vec![Some(0.7), None]];
    assert_eq!(average_rank(&table).unwrap(), vec![(1.0 + 2.0) / 2.0, (2.0 + 1.0) / 2.0, (3.0 + 3.0) / 2.0]);
    assert!(matches!(average_rank(&[]), Err(Error::EmptyTable)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn swapping_samples_flips_direction_and_keeps_p(v in prop::collection::vec((-5i32..5, -5i32..5), 5..25)) {
        let x: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
        let a = wilcoxon_signed_rank(&x, &y, 0.05).unwrap();
        let b = wilcoxon_signed_rank(&y, &x, 0.05).unwrap();
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        let flipped = match a.direction { Direction::Gain => Direction::Drop, Direction::Drop => Direction::Gain, Direction::None => Direction::None };
        prop_assert_eq!(b.direction, flipped);
    }

    #[test]
    fn ranks_follow_method_permutations(scores in prop::collection::vec(prop::collection::vec(prop::option::of(0.0f64..1.0), 3), 2..6), rot in 0usize..6) {
        let m = scores.len();
        let base = average_rank(&scores).unwrap();
        let perm: Vec<usize> = (0..m).map(|i| (i + rot) % m).collect();
        let permuted: Vec<Vec<Option<f64>>> = perm.iter().map(|&i| scores[i].clone()).collect();
        let ranks = average_rank(&permuted).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((ranks[k] - base[i]).abs() < 1e-12);
        }
    }
}
