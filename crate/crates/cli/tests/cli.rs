use std::path::Path;
use std::process::{Command, Output};

fn fedvps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedvps")).args(args).output().unwrap()
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedvps(&["run", "--config", "single", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("cycles.csv")).unwrap();
    assert!(csv.starts_with("cycle,t,selected_service,provisional,fix,"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cycles"], 15);
    assert!(summary["output_rmse_m"].as_f64().unwrap() < 1e-9);
}

#[test]
fn shipped_configs_match_presets_and_run_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let file = configs().join("crossing.json");
    let file = file.to_str().unwrap();
    assert!(fedvps(&["run", "--config", file, "--out", a.path().to_str().unwrap()]).status.success());
    assert!(fedvps(&["run", "--config", "crossing", "--out", b.path().to_str().unwrap()]).status.success());
    let read = |d: &Path| std::fs::read(d.join("cycles.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn seed_override_changes_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let out = fedvps(&["run", "--config", "crossing", "--seed", seed, "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success());
    }
    let read = |d: &Path| std::fs::read(d.join("cycles.csv")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
}

#[test]
fn experiments_write_named_tables() {
    for (name, config) in [("stitch", "two-rooms"), ("selector", "selector"), ("recognizer", "recognizer")] {
        let dir = tempfile::tempdir().unwrap();
        let out = fedvps(&[
            "experiment", name, "--config", config, "--trials", "10", "--out", dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let table = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        assert!(table.lines().count() > 1, "{name}");
        assert!(dir.path().join("summary.json").exists());
    }
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedvps(&["run", "--config", "no-such-preset", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such file or preset"));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, r#"{"seed": 1, "services": [], "device_path": {"waypoints": [], "speed": 1}, "duration": 5}"#).unwrap();
    let out = fedvps(&["run", "--config", broken.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no waypoints"));

    let out = fedvps(&["experiment", "stitch", "--config", "two-rooms", "--trials", "0", "--out", "x"]);
    assert!(!out.status.success());
}
