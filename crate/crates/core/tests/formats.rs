use std::path::PathBuf;

use retention::datasets::blobs;
use retention::ensemble::{train_forest, Aggregation, Dataset, Prediction, TrainParams};
use retention::mapping::{map, Strategy};
use retention::pathspace::extract_paths;
use retention::pruning::purity_threshold_prune;
use retention::toolkit::{load_ensemble, load_layout, save_ensemble, save_layout, EnsembleDocument, SplitInfo};
use retention::Error;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn margin_fixture(name: &str) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(data_dir().join(name)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let parse = |key: &str| -> Vec<Vec<f64>> {
        v[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|row| {
                row.as_array()
                    .unwrap()
                    .iter()
                    .map(|x| x.as_str().unwrap().parse().unwrap())
                    .collect()
            })
            .collect()
    };
    (parse("instances"), parse("margins"))
}

fn check_margins(model: &str, margins: &str, groups: usize) {
    let e = load_ensemble(data_dir().join(model)).unwrap();
    assert!(matches!(e.aggregation(), Aggregation::MarginSum { groups: g, .. } if g == groups));
    let (instances, expected) = margin_fixture(margins);
    assert!(!instances.is_empty());
    for (x, want) in instances.iter().zip(&expected) {
        let Prediction::Margin(got) = e.predict(x).unwrap() else {
            panic!("margin model returned a class")
        };
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= 1e-9, "{model}: {g} vs {w}");
        }
    }
}

#[test]
fn gbm_binary_margins_match_reference() {
    check_margins("gbm_binary.json", "gbm_binary_margins.json", 1);
}

#[test]
fn gbm_multiclass_margins_match_reference() {
    check_margins("gbm_multiclass.json", "gbm_multiclass_margins.json", 3);
}

#[test]
fn gbm_model_cannot_be_purity_pruned() {
    let e = load_ensemble(data_dir().join("gbm_binary.json")).unwrap();
    let data = Dataset::from_csv_path(data_dir().join("breast_cancer.csv")).unwrap();
    let err = purity_threshold_prune(&e, &data, 0.01).unwrap_err();
    assert!(matches!(err, Error::NotPrunable), "{err}");
    assert_eq!(err.to_string(), "pruning requires bagging-trained ensemble");
}

#[test]
fn csv_fixtures_load_with_expected_shape() {
    let bc = Dataset::from_csv_path(data_dir().join("breast_cancer.csv")).unwrap();
    assert_eq!((bc.len(), bc.feature_count(), bc.class_count()), (569, 30, 2));
    let wine = Dataset::from_csv_path(data_dir().join("wine.csv")).unwrap();
    assert_eq!((wine.len(), wine.feature_count(), wine.class_count()), (178, 13, 3));
}

#[test]
fn trained_forest_round_trips_through_document() {
    let data = blobs(200, 4, 3, 5);
    let e = train_forest(&data, &TrainParams::new(8, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_ensemble(&e, &path).unwrap();
    let back = load_ensemble(&path).unwrap();
    assert_eq!(back, e);
    assert!(back.is_prunable());

    let doc = EnsembleDocument::from_ensemble(&e).with_split(SplitInfo {
        train_fraction: 0.7,
        seed: 42,
    });
    let again = EnsembleDocument::from_json(&doc.to_json().unwrap()).unwrap();
    assert_eq!(again.split.map(|s| s.seed), Some(42));
    assert_eq!(again.to_ensemble().unwrap(), e);
}

#[test]
fn layout_round_trips() {
    let data = blobs(150, 3, 2, 1);
    let e = train_forest(&data, &TrainParams::new(5, 1)).unwrap();
    let paths = extract_paths(&e);
    let dir = tempfile::tempdir().unwrap();
    for st in Strategy::ALL {
        let layout = map(&paths, st, 16).unwrap();
        let path = dir.path().join(format!("{st}.json"));
        save_layout(&layout, &path).unwrap();
        assert_eq!(load_layout(&path).unwrap(), layout);
    }
}

#[test]
fn malformed_documents_report_their_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"format\": \"retention-ensemble\"").unwrap();
    assert!(matches!(load_ensemble(&path), Err(Error::Format { .. })));
    let missing = dir.path().join("missing.json");
    assert!(matches!(load_ensemble(&missing), Err(Error::Io { .. })));
}
