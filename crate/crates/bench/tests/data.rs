use dabench::data::{load_csv_dataset, load_csv_str, CsvSchema};
use dabench::BenchError;
use nalgebra::DMatrix;

const FOUR_ROWS: &str = "\
domain,label,f0,f1
source,0,1.5,-2.0
source,1,0.25,3.0
target,0,-1.0,0.5
target,1,4.0,1e-3
";

#[test]
fn four_rows_round_trip() {
    let ds = load_csv_str(FOUR_ROWS, &CsvSchema::default(), "tiny").unwrap();
    let expected = DMatrix::from_row_slice(4, 2, &[1.5, -2.0, 0.25, 3.0, -1.0, 0.5, 4.0, 1e-3]);
    assert_eq!(ds.features, expected);
    assert_eq!(ds.labels, vec![0, 1, 0, 1]);
    assert_eq!(ds.domain, vec![1, 1, -1, -1]);
    assert_eq!(ds.name, "tiny");
    assert_eq!(ds.shift_id, "source->target");
}

#[test]
fn file_on_disk_uses_stem_as_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mini.csv");
    std::fs::write(&path, FOUR_ROWS).unwrap();
    let ds = load_csv_dataset(&path, &CsvSchema::default()).unwrap();
    assert_eq!(ds.name, "mini");
    assert_eq!(ds.n_samples(), 4);
}

#[test]
fn nan_feature_is_rejected_with_its_line() {
    let text = "domain,label,f0,f1\nsource,0,1,2\ntarget,1,NaN,2\n";
    match load_csv_str(text, &CsvSchema::default(), "x") {
        Err(BenchError::NonNumericFeature { line, column }) => {
            assert_eq!(line, 3);
            assert_eq!(column, "f0");
        }
        other => panic!("unexpected {other:?}"),
    }
    let text = "domain,label,f0\nsource,0,abc\ntarget,1,2\n";
    assert!(matches!(load_csv_str(text, &CsvSchema::default(), "x"), Err(BenchError::NonNumericFeature { line: 2, .. })));
}

#[test]
fn missing_domain_column_is_a_schema_mismatch() {
    let text = "label,f0,f1\n0,1,2\n1,3,4\n";
    assert!(matches!(load_csv_str(text, &CsvSchema::default(), "x"), Err(BenchError::SchemaMismatch(_))));
}

#[test]
fn bad_labels_are_schema_mismatches() {
    let text = "domain,label,f0\nsource,zero,1\ntarget,1,2\n";
    assert!(matches!(load_csv_str(text, &CsvSchema::default(), "x"), Err(BenchError::SchemaMismatch(_))));
    let text = "domain,label,f0\nsource,-3,1\ntarget,1,2\n";
    assert!(matches!(load_csv_str(text, &CsvSchema::default(), "x"), Err(BenchError::SchemaMismatch(_))));
}

#[test]
fn listed_domain_without_rows_is_empty() {
    let text = "domain,label,f0\nsource,0,1\nsource,1,2\n";
    match load_csv_str(text, &CsvSchema::default(), "x") {
        Err(BenchError::EmptyDomain(d)) => assert_eq!(d, "target"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn several_domains_and_explicit_features() {
    let text = "\
label,domain,a,b,junk
0,amazon,1,2,x
1,dslr,3,4,y
0,webcam,5,6,z
1,webcam,7,8,w
0,other,9,9,q
";
    let schema = CsvSchema {
        feature_columns: Some(vec!["b".into(), "a".into()]),
        source_domains: vec!["amazon".into(), "dslr".into()],
        target_domains: vec!["webcam".into()],
        ..CsvSchema::default()
    };
    let ds = load_csv_str(text, &schema, "office").unwrap();
    assert_eq!(ds.domain, vec![1, 2, -1, -1]);
    assert_eq!(ds.features, DMatrix::from_row_slice(4, 2, &[2.0, 1.0, 4.0, 3.0, 6.0, 5.0, 8.0, 7.0]));
    assert_eq!(ds.shift_id, "amazon+dslr->webcam");
}

#[test]
fn shipped_example_loads() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/example.csv");
    let ds = load_csv_dataset(path, &CsvSchema::default()).unwrap();
    assert_eq!(ds.n_features(), 2);
    assert_eq!(ds.source_indices().len(), 40);
    assert_eq!(ds.target_indices().len(), 40);
}
