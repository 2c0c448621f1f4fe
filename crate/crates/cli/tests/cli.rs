//! Process-level behavior of the `guardscan` binary: exit codes, error
//! messages, configuration precedence and a small end-to-end run.

use std::path::Path;
use std::process::{Command, Output};

fn guardscan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guardscan")).args(args).current_dir(dir).output().expect("spawn guardscan")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn keyframes_prints_one_index_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = guardscan(&["keyframes", "--frames", "1000", "--fps", "10", "--skip", "10", "--stride", "100"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let idx: Vec<usize> = stdout(&o).lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(idx, vec![100, 200, 300, 400, 500, 600, 700, 800]);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(guardscan(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(guardscan(&["detect", "--model"], dir.path()).status.code(), Some(2));
    assert_eq!(guardscan(&[], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_model_exits_1_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("blank.png");
    guardscan_core::image::Image::filled(64, 64, 0.5).save_png(&img).unwrap();
    let o = guardscan(&["detect", "--model", "no_such_model.json", "--image", "blank.png", "--out", "dets"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_model.json"), "stderr: {}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn config_precedence_flags_over_file_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"synth": {"seed": 11, "missing_prob": 0.3}}"#).unwrap();

    let defaults = guardscan(&["--echo-config", "synth", "--out", "d"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&defaults.stdout).unwrap();
    assert_eq!(v["synth"]["seed"], 7);

    let file = guardscan(&["--config", "cfg.json", "--echo-config", "synth", "--out", "d"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&file.stdout).unwrap();
    assert_eq!((v["synth"]["seed"].as_u64(), v["synth"]["missing_prob"].as_f64()), (Some(11), Some(0.3)));

    let flag = guardscan(&["--config", "cfg.json", "--echo-config", "synth", "--out", "d", "--seed", "3"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&flag.stdout).unwrap();
    assert_eq!((v["synth"]["seed"].as_u64(), v["synth"]["missing_prob"].as_f64()), (Some(3), Some(0.3)));
    assert!(!dir.path().join("d").exists(), "--echo-config must not run the command");
}

#[test]
fn unknown_config_key_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"synht": {}}"#).unwrap();
    let o = guardscan(&["--config", "cfg.json", "keyframes", "--frames", "100", "--fps", "1", "--skip", "1", "--stride", "5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("synht"), "stderr: {}", stderr(&o));
}

#[test]
fn small_end_to_end_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let o = guardscan(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["synth", "--out", "data", "--train", "4", "--test", "2"]);
    run(&["train-svm", "--data", "data", "--out", "svm.json", "--c-grid", "0.1", "--folds", "2"]);
    run(&["pipeline", "--model", "svm.json", "--data", "data", "--image", "data/images/facade_0004.png", "--out", "pipe"]);
    let o = run(&["eval", "--data", "data", "--svm-model", "svm.json", "--stages", "all", "--out", "ev"]);
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 4, "{csv}");
    assert!(dir.path().join("ev/report.csv").exists());
    assert!(dir.path().join("ev/per_image.jsonl").exists());
}
