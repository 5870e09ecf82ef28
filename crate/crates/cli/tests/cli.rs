use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use exitset_cli::{parse_config_str, run_experiment};
use tempfile::TempDir;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exitset-lab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn constants_run_exits_zero_and_writes_report() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "{}");
    let out = dir.path().join("out");
    let status = lab(&["constants", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["tag"], "constants");
    assert!(report["assertions"].as_array().unwrap().iter().all(|a| a["pass"] == true));
    assert!(out.join("constants.csv").exists());
}

#[test]
fn odd_grid_size_exits_two_with_failure_record() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), r#"{ "grid": { "size": 63 } }"#);
    let out = dir.path().join("out");
    let status = lab(&["constants", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(status.status.code(), Some(2));
    let failure = fs::read_to_string(out.join("failure.json")).unwrap();
    assert!(failure.contains("63"), "{failure}");
}

#[test]
fn unknown_tag_is_rejected_by_the_parser() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "{}");
    let status = lab(&["bogus", "--config", &config]);
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("possible values"));
}

#[test]
fn overlapping_peaks_rejected_before_running() {
    let body = r#"{
        "curvature": { "kind": "double_peak", "peaks": [[1.0, 1.0, 1.0], [1.5, 1.0, 1.0]] }
    }"#;
    let err = parse_config_str(body).unwrap_err();
    assert!(format!("{err:#}").contains("separation"), "{err:#}");
}

#[test]
fn same_seed_gives_identical_trace() {
    let body = r#"{
        "grid": { "size": 8 },
        "curvature": { "kind": "constant", "value": -1.0 },
        "flow": { "kind": "yamabe", "dt": 0.001, "t_max": 0.02, "sample_every": 5 },
        "seed": 11
    }"#;
    let config = parse_config_str(body).unwrap();
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_experiment("flow", &config, &a).unwrap();
    run_experiment("flow", &config, &b).unwrap();
    for file in ["trace.csv", "trace_full.csv", "initial.field"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }
}

#[test]
fn seed_override_changes_initial_state() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        r#"{ "grid": { "size": 8 }, "flow": { "t_max": 0.005, "dt": 0.001 } }"#,
    );
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        lab(&["flow", "--config", &config, "--out", out.to_str().unwrap(), "--seed", seed]);
        fs::read(out.join("initial.field")).unwrap()
    };
    assert_ne!(run("1", "one"), run("2", "two"));
}
