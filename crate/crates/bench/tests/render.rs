use dabench::records::{dump_records, parse_records, TrialRecord, SCHEMA_VERSION};
use dabench::render::{build_table, scorer_analysis, select_best_scorer, Mark, ResultTable, ScorerChoice};
use dabench::BenchError;
use dabench_core::methods::MethodId;
use dabench_core::scorers::ScorerId;

fn rec(method: MethodId, scorer: ScorerId, dataset: &str, outer: usize, acc: f64) -> TrialRecord {
    TrialRecord {
        schema_version: SCHEMA_VERSION,
        dataset: dataset.into(),
        shift_id: "s".into(),
        method_id: method,
        scorer_id: scorer,
        outer_split_index: outer,
        chosen_params: Some(Default::default()),
        cv_score: Some(acc),
        target_test_accuracy: Some(acc),
        source_test_accuracy: Some(0.9),
        target_test_f1: Some(acc),
        fit_seconds: 0.01,
        timed_out: false,
        failed: false,
        failure_reason: None,
        base: None,
    }
}

/// Baseline accuracies that are not all equal, so paired differences vary.
fn base_acc(i: usize) -> f64 {
    0.5 + 0.01 * (i % 7) as f64
}

#[test]
fn single_scorer_is_selected() {
    let recs: Vec<_> = (0..3).map(|k| rec(MethodId::Coral, ScorerId::Pe, "d", k, 0.7)).collect();
    assert_eq!(select_best_scorer(&recs, MethodId::Coral).unwrap(), ScorerId::Pe);
    assert!(matches!(select_best_scorer(&recs, MethodId::Sa), Err(BenchError::NoRecords)));
}

#[test]
fn dominating_scorer_wins_and_supervised_is_ignored() {
    let mut recs = Vec::new();
    for k in 0..5 {
        recs.push(rec(MethodId::Sa, ScorerId::Supervised, "d", k, 0.99));
        recs.push(rec(MethodId::Sa, ScorerId::CircV, "d", k, 0.8));
        recs.push(rec(MethodId::Sa, ScorerId::Iw, "d", k, 0.6));
        recs.push(rec(MethodId::Sa, ScorerId::Snd, "d", k, 0.7));
    }
    assert_eq!(select_best_scorer(&recs, MethodId::Sa).unwrap(), ScorerId::CircV);
}

#[test]
fn ties_follow_the_fixed_order() {
    let mut recs = Vec::new();
    for s in [ScorerId::Snd, ScorerId::Dev, ScorerId::MixVal, ScorerId::Iw] {
        recs.push(rec(MethodId::Sa, s, "d", 0, 0.7));
    }
    assert_eq!(select_best_scorer(&recs, MethodId::Sa).unwrap(), ScorerId::Iw);
}

#[test]
fn method_equal_to_baseline_is_unannotated() {
    let mut recs = Vec::new();
    for k in 0..12 {
        recs.push(rec(MethodId::TrainSrc, ScorerId::CircV, "d", k, base_acc(k)));
        recs.push(rec(MethodId::Coral, ScorerId::CircV, "d", k, base_acc(k)));
    }
    let t = build_table(&recs, ScorerChoice::Selected).unwrap();
    for row in &t.rows {
        assert_eq!(row.cells[0].mark, Mark::None);
    }
    let md = t.to_markdown();
    assert!(!md.contains('+') && !md.contains(" -"), "{md}");
}

#[test]
fn uniform_gain_over_twelve_pairs_is_significant() {
    let mut recs = Vec::new();
    for k in 0..12 {
        recs.push(rec(MethodId::TrainSrc, ScorerId::CircV, "d", k, base_acc(k)));
        recs.push(rec(MethodId::Coral, ScorerId::CircV, "d", k, base_acc(k) + 0.1));
        recs.push(rec(MethodId::Sa, ScorerId::CircV, "d", k, base_acc(k) - 0.1));
    }
    let t = build_table(&recs, ScorerChoice::Selected).unwrap();
    let gain = &t.row(MethodId::Coral).unwrap().cells[0];
    // all 12 differences positive: exact two-sided p = 2 / 2^12
    assert!((gain.p_value.unwrap() - 2.0 / 4096.0).abs() < 1e-12);
    assert_eq!(gain.mark, Mark::StrongGain);
    assert_eq!(t.row(MethodId::Sa).unwrap().cells[0].mark, Mark::StrongDrop);
    assert!((gain.mean.unwrap() - t.mean(MethodId::TrainSrc, "d").unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(t.row(MethodId::Coral).unwrap().average_rank, 1.0);
    assert_eq!(t.row(MethodId::Sa).unwrap().average_rank, 3.0);
    assert!(t.to_markdown().contains("++"));
}

#[test]
fn weak_gain_gets_a_single_mark() {
    // 7 positive differences and the smallest one negative: W- = 1, p = 4 / 256
    let mut recs = Vec::new();
    for k in 0..8 {
        let d = if k == 0 { -0.01 } else { 0.02 + 0.001 * k as f64 };
        recs.push(rec(MethodId::TrainSrc, ScorerId::CircV, "d", k, 0.5));
        recs.push(rec(MethodId::Coral, ScorerId::CircV, "d", k, 0.5 + d));
    }
    let t = build_table(&recs, ScorerChoice::Selected).unwrap();
    let c = &t.row(MethodId::Coral).unwrap().cells[0];
    assert!((c.p_value.unwrap() - 4.0 / 256.0).abs() < 1e-12);
    assert_eq!(c.mark, Mark::Gain);
}

#[test]
fn timed_out_trials_render_as_na() {
    let mut recs = Vec::new();
    for k in 0..3 {
        recs.push(rec(MethodId::TrainSrc, ScorerId::Iw, "d", k, 0.5));
        let mut r = rec(MethodId::Kmm, ScorerId::Iw, "d", k, 0.0);
        r.timed_out = k == 1;
        r.target_test_accuracy = None;
        recs.push(r);
    }
    let t = build_table(&recs, ScorerChoice::Selected).unwrap();
    let row = t.row(MethodId::Kmm).unwrap();
    assert!(row.cells[0].mean.is_none());
    assert_eq!(row.average_rank, 2.0);
    assert!(t.to_markdown().contains("NA"));
}

#[test]
fn missing_baseline_is_an_error() {
    let recs = vec![rec(MethodId::Coral, ScorerId::Iw, "d", 0, 0.5)];
    assert!(matches!(build_table(&recs, ScorerChoice::Selected), Err(BenchError::MissingBaseline(_))));
    assert!(matches!(build_table(&[], ScorerChoice::Selected), Err(BenchError::NoRecords)));
}

fn mixed_table() -> ResultTable {
    let mut recs = Vec::new();
    for (di, d) in ["Cov. shift", "Tar. shift"].iter().enumerate() {
        for k in 0..6 {
            let b = base_acc(k + di);
            recs.push(rec(MethodId::TrainSrc, ScorerId::CircV, d, k, b));
            recs.push(rec(MethodId::Coral, ScorerId::CircV, d, k, b + 0.013 * k as f64));
            recs.push(rec(MethodId::TrainTgt, ScorerId::Iw, d, k, 0.97));
            let mut r = rec(MethodId::Jdot, ScorerId::Pe, d, k, 0.0);
            if di == 1 {
                r.timed_out = true;
                r.target_test_accuracy = None;
            } else {
                r.target_test_accuracy = Some(1.0 / 3.0 + k as f64 * 1e-3);
            }
            recs.push(r);
        }
    }
    build_table(&recs, ScorerChoice::Selected).unwrap()
}

#[test]
fn csv_and_json_round_trips_are_lossless() {
    let t = mixed_table();
    assert!(t.row(MethodId::TrainTgt).unwrap().oracle);
    assert_eq!(ResultTable::from_json(&t.to_json().unwrap()).unwrap(), t);
    assert_eq!(ResultTable::from_csv(&t.to_csv().unwrap()).unwrap(), t);
}

#[test]
fn records_round_trip_and_reject_other_versions() {
    let recs = vec![rec(MethodId::Coral, ScorerId::Iw, "d", 0, 0.123456789), rec(MethodId::Sa, ScorerId::Pe, "e", 1, 0.5)];
    let mut buf = Vec::new();
    dump_records(&mut buf, &recs).unwrap();
    assert_eq!(parse_records(buf.as_slice()).unwrap(), recs);
    let text = String::from_utf8(buf).unwrap().replace("\"schema_version\":1", "\"schema_version\":99");
    assert!(parse_records(text.as_bytes()).is_err());
}

#[test]
fn scorer_analysis_correlates_scores_with_accuracy() {
    let mut recs = Vec::new();
    for k in 0..10 {
        let acc = 0.5 + 0.04 * k as f64;
        recs.push(rec(MethodId::Coral, ScorerId::Supervised, "d", k, acc));
        let mut r = rec(MethodId::Coral, ScorerId::Pe, "d", k, acc);
        r.cv_score = Some(-acc);
        recs.push(r);
        // baselines do not count
        let mut b = rec(MethodId::TrainSrc, ScorerId::Supervised, "d", k, acc);
        b.cv_score = Some(-acc);
        recs.push(b);
    }
    let a = scorer_analysis(&recs).unwrap();
    let get = |s| a.scorers.iter().find(|c| c.scorer_id == s).unwrap();
    assert!((get(ScorerId::Supervised).pearson.unwrap() - 1.0).abs() < 1e-12);
    assert!((get(ScorerId::Pe).pearson.unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(get(ScorerId::Supervised).n_points, 10);
    assert!(a.to_markdown().contains("Pearson"));
}
