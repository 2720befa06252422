use std::path::PathBuf;

use retention::camsim::{cost_report, random_instances, CamSimulator};
use retention::ensemble::{oob_accuracy, train_forest, Dataset, TrainParams};
use retention::mapping::{map, Strategy};
use retention::pathspace::extract_paths;
use retention::pruning::purity_threshold_prune;
use retention::toolkit::{load_ensemble, run_sweep, save_ensemble, SweepConfig};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

#[test]
fn train_prune_map_simulate_on_real_data() {
    let data = Dataset::from_csv_path(data_dir().join("wine.csv")).unwrap();
    let (train, test) = data.split(0.7, 42).unwrap();
    let e = train_forest(&train, &TrainParams::new(20, 42)).unwrap();
    assert!(e.accuracy(&test).unwrap() > 0.85);

    let r = purity_threshold_prune(&e, &train, 0.03).unwrap();
    assert!(r.oob_before - r.oob_after <= 0.03);
    assert!(r.pruned.node_count() <= e.node_count());
    assert_eq!(oob_accuracy(&r.pruned, &train).unwrap(), r.oob_after);

    let dir = tempfile::tempdir().unwrap();
    save_ensemble(&r.pruned, dir.path().join("m.json")).unwrap();
    let model = load_ensemble(dir.path().join("m.json")).unwrap();

    let paths = extract_paths(&model);
    let mut queries: Vec<Vec<f64>> = test.rows().map(<[f64]>::to_vec).collect();
    queries.extend(random_instances(paths.index(), 300, 1));
    let unified = map(&paths, Strategy::Unified, 32).unwrap().total_tcams();
    for st in Strategy::ALL {
        let layout = map(&paths, st, 32).unwrap();
        layout.validate(&paths).unwrap();
        let sim = CamSimulator::new(&layout, &paths).unwrap();
        for x in &queries {
            assert_eq!(sim.predict(x).unwrap(), model.predict(x).unwrap(), "{st}");
            assert!(sim
                .match_instance(x)
                .unwrap()
                .per_tree_counts(&paths)
                .iter()
                .all(|&c| c == 1));
        }
        let cost = cost_report(&layout, &paths);
        assert_eq!(cost.tcam_count, layout.total_tcams());
        if st == Strategy::Odr {
            assert!(cost.tcam_count <= unified);
        }
    }
}

#[test]
fn sweep_over_csv_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(data_dir().join("breast_cancer.csv"), dir.path().join("bc.csv")).unwrap();
    let cfg = SweepConfig::from_toml(
        r#"
        strategies = ["unified", "odr", "spc"]
        tcam_sizes = [32]
        num_trees = [10]
        tolerances = [0.02]
        check_oracle = true

        [[datasets]]
        name = "bc"
        path = "bc.csv"

        [[datasets]]
        name = "credit"
        profile = "credit_approval"
        size = 300
        "#,
    )
    .unwrap();
    let rows = run_sweep(&cfg, dir.path()).unwrap();
    assert_eq!(rows.len(), cfg.cell_count());
    assert_eq!(rows.len(), 2 * 2 * 3);
    for r in &rows {
        assert!(r.error.is_none(), "{:?}", r.error);
        assert_eq!(r.oracle_mismatches, Some(0));
        assert!(r.tcam_count.unwrap() > 0);
    }
}
