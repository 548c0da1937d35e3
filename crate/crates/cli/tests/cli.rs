use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "dataset": {
    "scene": {"frame_count": 600, "seed": 3},
    "raytrace": {"antennas": 8, "subcarriers": 4},
    "resolution": [16, 32],
    "horizons": [1, 6],
    "sample_stride": 3
  },
  "train": {"epochs": 2, "batch_size": 32},
  "selection": {"epochs": 1},
  "split_block_frames": 30
}"#;

fn sembeam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sembeam")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sembeam(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn step_by_step_run_produces_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("tiny.json"), TINY).unwrap();
    ok(d, &["generate", "--config", "tiny.json", "--out", "ds"]);
    assert!(d.join("ds/manifest.json").exists());
    for task in ["beam", "blockage"] {
        ok(d, &["select", "--config", "tiny.json", "--dataset", "ds", "--task", task, "--out", "run"]);
    }
    let sel = std::fs::read_to_string(d.join("run/selection_beam.json")).unwrap();
    assert!(sel.contains("\"location\""));
    assert!(!std::fs::read_to_string(d.join("run/trace_beam.jsonl")).unwrap().is_empty());
    ok(d, &["train", "--config", "tiny.json", "--dataset", "ds", "--task", "beam", "--out", "run"]);
    ok(d, &["eval", "--config", "tiny.json", "--dataset", "ds", "--task", "beam", "--out", "run", "--g-list", "1,2,3,5"]);
    for h in ["1", "6"] {
        ok(d, &["train", "--config", "tiny.json", "--dataset", "ds", "--task", "blockage", "--horizon", h, "--out", "run"]);
        ok(d, &["eval", "--config", "tiny.json", "--dataset", "ds", "--task", "blockage", "--horizon", h, "--out", "run"]);
    }
    ok(d, &["report", "--out", "run"]);
    let csv = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "metric,value,n,seed");
    assert_eq!(lines.len() - 1, 4 * 2 + 2);
    let first = std::fs::read(d.join("run/report.json")).unwrap();
    ok(d, &["report", "--out", "run"]);
    assert_eq!(std::fs::read(d.join("run/report.json")).unwrap(), first);
    assert_eq!(std::fs::read_to_string(d.join("run/metrics.csv")).unwrap(), csv);
}

#[test]
fn explicit_features_and_pins() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("tiny.json"), TINY).unwrap();
    ok(d, &["generate", "--config", "tiny.json", "--out", "ds", "--seed", "9"]);
    let out = ok(d, &[
        "select", "--config", "tiny.json", "--dataset", "ds", "--task", "beam", "--out", "run",
        "--pin-feature", "location", "--pin-feature", "vehicle", "--vmax", "3", "--epochs", "1",
    ]);
    assert!(out.contains("\"vehicle\""));
    ok(d, &["train", "--config", "tiny.json", "--dataset", "ds", "--task", "beam", "--out", "run", "--features", "location,sidewalk", "--epochs", "1"]);
    let info = std::fs::read_to_string(d.join("run/model_beam.json")).unwrap();
    assert!(info.contains("sidewalk"));
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&sembeam(d, &["select", "--dataset", "ds", "--task", "both", "--out", "run"])), 1);
    assert_eq!(code(&sembeam(d, &["train", "--dataset", "ds", "--task", "beam", "--out", "r", "--features", "lidar"])), 1);
    assert_eq!(code(&sembeam(d, &["frobnicate"])), 1);
    std::fs::write(d.join("broken.json"), "{ not json").unwrap();
    assert_eq!(code(&sembeam(d, &["generate", "--config", "broken.json", "--out", "ds"])), 1);
    std::fs::write(d.join("zero.json"), r#"{"dataset": {"scene": {"frame_count": 0}}}"#).unwrap();
    assert_eq!(code(&sembeam(d, &["generate", "--config", "zero.json", "--out", "ds"])), 1);
}

#[test]
fn io_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = sembeam(d, &["report", "--out", "."]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["run.json", "selection_beam.json", "selection_blockage.json", "eval_beam.json"] {
        assert!(err.contains(name), "{err}");
    }
    assert_eq!(code(&sembeam(d, &["select", "--dataset", "missing", "--task", "beam", "--out", "run"])), 2);
    assert_eq!(code(&sembeam(d, &["generate", "--config", "missing.json", "--out", "ds"])), 2);
}

#[test]
fn help_exits_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["--help"]);
    for sub in ["generate", "select", "train", "eval", "report"] {
        assert!(out.contains(sub));
    }
}
