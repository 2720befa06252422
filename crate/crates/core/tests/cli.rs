use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn retention(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retention"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn full_workflow_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let wine = data("wine.csv");
    let ok = |args: &[&str]| {
        let out = retention(args, d);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(ok(&["train", "--data", &wine, "--trees", "10", "--out", "m.json"]).contains("trained 10 trees"));
    assert!(ok(&[
        "prune",
        "--model",
        "m.json",
        "--data",
        &wine,
        "--tolerance",
        "2",
        "--out",
        "p.json"
    ])
    .contains("threshold"));
    assert!(ok(&["paths", "--model", "p.json"]).contains("redundancy"));
    ok(&[
        "map",
        "--model",
        "p.json",
        "--strategy",
        "odr",
        "--tcam-size",
        "32",
        "--out",
        "l.json",
    ]);
    assert!(d.join("l.json").exists());
    let sim = ok(&[
        "simulate",
        "--model",
        "p.json",
        "--strategy",
        "spc",
        "--tcam-size",
        "32",
        "--random",
        "200",
        "--check-oracle",
    ]);
    assert!(sim.contains("0 oracle mismatches"), "{sim}");
    ok(&[
        "synth",
        "--profile",
        "credit_approval",
        "--size",
        "200",
        "--out",
        "c.csv",
    ]);
    std::fs::write(
        d.join("s.toml"),
        "strategies = [\"unified\", \"fr\"]\ntcam_sizes = [16]\nnum_trees = [5]\ntolerances = []\n\n[[datasets]]\nname = \"c\"\npath = \"c.csv\"\n",
    )
    .unwrap();
    assert!(ok(&["sweep", "--config", "s.toml", "--out", "r.json"]).contains("unified"));
    ok(&["report", "--input", "r.json", "--csv", "r.csv"]);
    assert_eq!(std::fs::read_to_string(d.join("r.csv")).unwrap().lines().count(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&retention(&["--help"], d)), 0);
    assert_eq!(code(&retention(&["map", "--strategy", "nope"], d)), 1);
    assert_eq!(code(&retention(&["frobnicate"], d)), 1);
    assert_eq!(code(&retention(&["paths", "--model", "missing.json"], d)), 2);

    std::fs::write(d.join("bad.json"), "{}").unwrap();
    let out = retention(&["paths", "--model", "bad.json"], d);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));

    let gbm = data("gbm_binary.json");
    let bc = data("breast_cancer.csv");
    let out = retention(
        &[
            "prune",
            "--model",
            &gbm,
            "--data",
            &bc,
            "--tolerance",
            "1",
            "--out",
            "x.json",
        ],
        d,
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("pruning requires bagging-trained ensemble"));
}
