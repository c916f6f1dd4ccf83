use std::path::Path;
use std::process::{Command, Output};

fn mlpip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlpip")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn train_then_eval_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        r#"{"dataset": "cluster", "iterations": 4, "log_every": 2, "val_episodes": 4, "tasks_per_batch": 2}"#,
    );
    let out = mlpip(&["train", "--config", &cfg, "--seed", "3", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["iterations"], 4);
    for file in ["metrics.csv", "best.json", "final.json"] {
        assert!(out_dir.join(file).exists(), "{file}");
    }

    let ckpt = out_dir.join("final.json");
    let ckpt = ckpt.to_str().unwrap();
    let eval = mlpip(&["eval", "--checkpoint", ckpt, "--way", "3", "--shot", "2", "--episodes", "5"]);
    assert!(eval.status.success());
    let v = json(&eval);
    assert_eq!(v["way"], 3);
    assert_eq!(v["episodes"], 5);
    assert_eq!(v["optimizer_steps"], 0);

    let sweep = mlpip(&["sweep", "--checkpoint", ckpt, "--ways", "2,4", "--shots", "1", "--episodes", "3"]);
    assert!(sweep.status.success());
    let cells = json(&sweep);
    assert_eq!(cells.as_array().unwrap().len(), 2);
    assert_eq!(cells[0]["amortization_parameters"], cells[1]["amortization_parameters"]);
}

#[test]
fn export_is_seeded_jsonl() {
    let a = mlpip(&["export-tasks", "--dataset", "glyph", "--count", "2", "--seed", "5"]);
    let b = mlpip(&["export-tasks", "--dataset", "glyph", "--count", "2", "--seed", "5"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let episodes = mlpip::tasks::read_jsonl(&text).unwrap();
    assert_eq!(episodes.len(), 2);
    assert!(episodes.iter().all(|e| e.validate().is_ok()));
}

#[test]
fn gradcheck_passes() {
    let out = mlpip(&["gradcheck", "--instances", "1"]);
    assert!(out.status.success());
    assert!(json(&out)["max_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"dataset": "cluster", "no_such_field": 1}"#);
    assert_eq!(mlpip(&["train", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(
        mlpip(&["export-tasks", "--dataset", "mnist", "--count", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(mlpip(&["eval", "--checkpoint", "/nonexistent/ckpt.json"]).status.code(), Some(2));
    assert_eq!(mlpip(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"dataset": "toy", "iterations": 50, "learning_rate": 1e6, "log_every": 50, "val_episodes": 2}"#,
    );
    let out = mlpip(&["train", "--config", &cfg, "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
