use std::path::Path;
use std::process::{Command, Output};

fn itm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itm"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(itm(&["no-such-command"], dir.path()).status.code(), Some(2));
    assert_eq!(itm(&["build-lanes", "--out", "x"], dir.path()).status.code(), Some(2));
    let o = itm(&["simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn missing_artifact_is_named_and_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = itm(&["build-lanes", "--world", "nowhere", "--out", "lanes"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(
        msg.contains("missing artifact") && msg.contains("pings.jsonl") && msg.contains("itm simulate"),
        "{msg}"
    );

    let o = itm(
        &["train", "--dataset", "data/dataset.csv", "--out", "model"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("data/dataset.csv"));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "seed = 5\n[pipeline]\nmin_pings = 30\nshort_haul_km = 50.0\n",
    )
    .unwrap();
    let o = itm(
        &[
            "simulate",
            "--config",
            "run.toml",
            "--min-pings",
            "25",
            "--print-config",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg: toml::Value = toml::from_str(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(cfg["seed"].as_integer(), Some(5));
    assert_eq!(cfg["sim"]["seed"].as_integer(), Some(5));
    assert_eq!(cfg["pipeline"]["min_pings"].as_integer(), Some(25));
    assert_eq!(cfg["pipeline"]["short_haul_km"].as_float(), Some(50.0));
    assert_eq!(cfg["pipeline"]["pickup_radius_km"].as_float(), Some(1.0));
}

#[test]
fn invalid_thresholds_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = itm(
        &["simulate", "--tau-min", "0.9", "--tau-high", "0.5", "--print-config"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pipeline_runs_end_to_end_with_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [&[&str]; 5] = [
        &["simulate", "--seed", "3", "--shipments", "60", "--out", "world"],
        &["build-lanes", "--world", "world", "--out", "lanes"],
        &[
            "make-dataset",
            "--world",
            "world",
            "--lanes",
            "lanes/lanes.jsonl",
            "--out",
            "data",
        ],
        &[
            "train",
            "--dataset",
            "data/dataset.csv",
            "--n-trees",
            "10",
            "--out",
            "model",
        ],
        &[
            "match",
            "--world",
            "world",
            "--lanes",
            "lanes/lanes.jsonl",
            "--model",
            "model/model.txt",
            "--out",
            "match",
        ],
    ];
    for args in steps {
        let o = itm(args, d);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let decisions = std::fs::read_to_string(d.join("match/decisions.csv")).unwrap();
    assert!(decisions.starts_with("shipment_id,engine,assigned_truck"));
    assert!(decisions.lines().count() > 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("match/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "match");
    assert!(manifest["inputs"]["model/model.txt"].is_string());
    assert!(manifest["outputs"]["decisions.csv"].is_string());
}
