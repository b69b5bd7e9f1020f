use dabench_core::dataset::{DomainDataset, PredictionSet, MASKED};
use dabench_core::metrics::{accuracy, macro_f1};
use dabench_core::split::stratified_split;
use dabench_core::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn features(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64)
}

#[test]
fn dataset_invariants() {
    let ok = DomainDataset::new(features(4), vec![0, 1, MASKED, 1], vec![1, 1, -1, -1], "d", "s").unwrap();
    assert_eq!(ok.source_indices(), vec![0, 1]);
    assert_eq!(ok.target_indices(), vec![2, 3]);
    assert_eq!(ok.classes(), vec![0, 1]);
    let masked = ok.masked_target();
    assert_eq!(masked.labels, vec![0, 1, MASKED, MASKED]);

    let bad = [
        DomainDataset::new(features(4), vec![0, 1, 0], vec![1, 1, -1, -1], "d", "s"),
        DomainDataset::new(features(4), vec![0, 1, 0, 1], vec![1, 1, 1, 1], "d", "s"),
        DomainDataset::new(features(4), vec![0, 1, 0, 1], vec![1, 0, -1, -1], "d", "s"),
        DomainDataset::new(features(4), vec![MASKED, 1, 0, 1], vec![1, 1, -1, -1], "d", "s"),
        DomainDataset::new(features(4), vec![0, -5, 0, 1], vec![1, 1, -1, -1], "d", "s"),
        DomainDataset::new(features(1), vec![0], vec![1], "d", "s"),
        DomainDataset::new(DMatrix::zeros(4, 0), vec![0, 1, 0, 1], vec![1, 1, -1, -1], "d", "s"),
    ];
    for (i, b) in bad.iter().enumerate() {
        assert!(b.is_err(), "case {i} accepted");
    }
    let mut x = features(4);
    x[(2, 1)] = f64::NAN;
    assert!(matches!(DomainDataset::new(x, vec![0, 1, 0, 1], vec![1, 1, -1, -1], "d", "s"), Err(Error::NonFiniteInput(_))));
}

#[test]
fn prediction_set_invariants() {
    let p = PredictionSet::new(DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.5, 0.5]), vec![0, 1]).unwrap();
    // ties go to the lowest class id
    assert_eq!(p.labels(), vec![1, 0]);
    assert!(PredictionSet::new(DMatrix::from_row_slice(1, 2, &[0.3, 0.6]), vec![0, 1]).is_err());
    assert!(PredictionSet::new(DMatrix::from_row_slice(1, 2, &[-0.1, 1.1]), vec![0, 1]).is_err());
    assert!(PredictionSet::new(DMatrix::from_row_slice(1, 1, &[1.0]), vec![0]).is_err());
}

#[test]
fn ten_labels_put_one_of_each_class_in_every_test_set() {
    let labels = [0, 0, 1, 1, 0, 1, 0, 1, 0, 1];
    let plan = stratified_split(&labels, 0.8, 5, 0).unwrap();
    assert_eq!(plan.repeats.len(), 5);
    for (train, test) in &plan.repeats {
        let mut t: Vec<i64> = test.iter().map(|&i| labels[i]).collect();
        t.sort_unstable();
        assert_eq!(t, vec![0, 1]);
        assert_eq!(train.len(), 8);
    }
}

#[test]
fn single_class_degenerates_to_plain_split() {
    let plan = stratified_split(&[3; 10], 0.8, 2, 1).unwrap();
    assert!(plan.repeats.iter().all(|(a, b)| a.len() == 8 && b.len() == 2));
}

#[test]
fn split_errors_and_determinism() {
    assert!(matches!(stratified_split(&[0, 1, 1, 1], 0.5, 1, 0), Err(Error::ClassTooSmall { class: 0, .. })));
    assert!(matches!(stratified_split(&[0, 0, 1, 1], 1.0, 1, 0), Err(Error::InvalidRatio(_))));
    assert!(matches!(stratified_split(&[0, 0, 1, 1], 0.0, 1, 0), Err(Error::InvalidRatio(_))));
    let labels: Vec<i64> = (0..50).map(|i| i % 3).collect();
    let a = stratified_split(&labels, 0.8, 5, 7).unwrap();
    assert_eq!(a, stratified_split(&labels, 0.8, 5, 7).unwrap());
    assert_eq!(format!("{a:?}"), format!("{:?}", stratified_split(&labels, 0.8, 5, 7).unwrap()));
    assert_ne!(a.repeats[0], a.repeats[1]);
    assert_ne!(a, stratified_split(&labels, 0.8, 5, 8).unwrap());
}

#[test]
fn accuracy_cases() {
    assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
    assert_eq!(accuracy(&[1, 0, 1], &[0, 1, 0]).unwrap(), 0.0);
    assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
    assert!(matches!(accuracy(&[0, 1], &[0]), Err(Error::LengthMismatch(..))));
}

#[test]
fn macro_f1_cases() {
    assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], None).unwrap(), 1.0);
    // class 1: p = 1, r = 1/2, F1 = 2/3; class 0: p = 2/3, r = 1, F1 = 0.8
    let f = macro_f1(&[1, 1, 0, 0], &[1, 0, 0, 0], None).unwrap();
    assert!((f - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    assert_eq!(macro_f1(&[0, 1, 0, 1], &[1, 0, 1, 0], None).unwrap(), 0.0);
    // a declared class absent from both sides counts as zero
    assert!((macro_f1(&[0, 1], &[0, 1], Some(&[0, 1, 2])).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!(matches!(macro_f1(&[0, 1], &[0], None), Err(Error::LengthMismatch(..))));
}

proptest! {
    #[test]
    fn splits_are_stratified_partitions(
        sizes in proptest::collection::vec(5usize..30, 1..4),
        ratio in 0.5f64..0.9,
        seed in any::<u64>(),
    ) {
        let labels: Vec<i64> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c as i64, n)).collect();
        let plan = stratified_split(&labels, ratio, 3, seed).unwrap();
        for (train, test) in &plan.repeats {
            let mut all: Vec<usize> = train.iter().chain(test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for (c, &n) in sizes.iter().enumerate() {
                let in_test = test.iter().filter(|&&i| labels[i] == c as i64).count() as f64;
                prop_assert!((in_test - n as f64 * (1.0 - ratio)).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn metrics_are_invariant_to_relabeling(y in proptest::collection::vec(0i64..3, 2..40), p in proptest::collection::vec(0i64..3, 40)) {
        let p = &p[..y.len()];
        prop_assert_eq!(accuracy(&y, &y).unwrap(), 1.0);
        let perm = |v: &[i64]| v.iter().map(|&c| (c + 1) % 3).collect::<Vec<_>>();
        let classes = [0, 1, 2];
        let a = macro_f1(&y, p, Some(&classes)).unwrap();
        let b = macro_f1(&perm(&y), &perm(p), Some(&classes)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
