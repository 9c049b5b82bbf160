use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ocn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocn"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run ocn")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run_config(ablate: bool) -> String {
    format!(
        r#"{{
            "model": {{"hidden": 4, "init_scale": 0.5, "fan_in_init": true, "ablate_comparison": {ablate}}},
            "data": {{"synth": {{"task": "lexical_overlap", "train_count": 24, "dev_count": 12, "article_len": 5}},
                     "limits": {{"article": 8, "question": 4, "option": 3}}}},
            "train": {{"epochs": 2, "batch_size": 8, "peak_lr": 0.01, "seed": 4}},
            "output": "out"
        }}"#
    )
}

const STORY: &str = r#"{
    "id": "high1.txt",
    "article": "Tom likes chocolate very much. Every Sunday he buys a big bar of chocolate at the shop near his school.",
    "questions": ["What does Tom buy on Sunday?"],
    "options": [["Milk.", "Bread.", "Apples.", "Chocolate."]]
}"#;

fn train_in(dir: &Path, ablate: bool) -> Value {
    write(dir, "run.json", &run_config(ablate));
    let out = ocn(&["train", "--config", "run.json"], dir);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout_json(&out)
}

#[test]
fn train_writes_checkpoints_and_metrics() {
    let dir = TempDir::new().unwrap();
    let report = train_in(dir.path(), false);
    assert!(dir.path().join("out/final.ckpt").is_file());
    assert!(dir.path().join("out/best.ckpt").is_file());
    assert_eq!(report["steps"], 6);
    let metrics = fs::read_to_string(dir.path().join("out/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 6);
    assert!(report["final_dev_accuracy"].is_f64());
}

#[test]
fn rerun_gives_identical_metrics_and_seed_flag_overrides() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.json", &run_config(false));
    let read = |sub: &str| fs::read(dir.path().join(sub).join("metrics.jsonl")).unwrap();
    for out in ["a", "b"] {
        let o = ocn(&["train", "--config", "run.json", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(read("a"), read("b"));
    let o = ocn(
        &["train", "--config", "run.json", "--out", "c", "--seed", "9"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn config_errors_exit_2_naming_the_field() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "nodata.json", r#"{"model": {"hidden": 4}}"#);
    let out = ocn(&["train", "--config", "nodata.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.train"));

    write(dir.path(), "typo.json", r#"{"model": {"hiden": 4}}"#);
    let out = ocn(&["train", "--config", "typo.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hiden"));

    let out = ocn(&["train"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_reproduces_best_dev_accuracy() {
    let dir = TempDir::new().unwrap();
    let report = train_in(dir.path(), false);
    let out = ocn(
        &[
            "eval",
            "--checkpoint",
            "out/best.ckpt",
            "--data",
            "out/dev.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let eval = stdout_json(&out);
    assert_eq!(eval["n"], 12);
    assert_eq!(eval["accuracy"], report["best_dev_accuracy"]);
}

#[test]
fn ablated_checkpoint_evaluates() {
    let dir = TempDir::new().unwrap();
    train_in(dir.path(), true);
    let out = ocn(
        &[
            "eval",
            "--checkpoint",
            "out/final.ckpt",
            "--data",
            "out/dev.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_json(&out)["accuracy"].is_f64());
}

#[test]
fn eval_rejects_empty_and_mismatched_data() {
    let dir = TempDir::new().unwrap();
    train_in(dir.path(), false);
    write(dir.path(), "empty.json", "[]");
    let out = ocn(
        &[
            "eval",
            "--checkpoint",
            "out/final.ckpt",
            "--data",
            "empty.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    let three = r#"{"article": "a b c", "questions": ["q?"], "options": [["a", "b", "c"]], "answers": ["A"]}"#;
    write(dir.path(), "three.json", three);
    let out = ocn(
        &[
            "eval",
            "--checkpoint",
            "out/final.ckpt",
            "--data",
            "three.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_outputs_probabilities_and_letter() {
    let dir = TempDir::new().unwrap();
    train_in(dir.path(), false);
    write(dir.path(), "story.json", STORY);
    let args = [
        "predict",
        "--checkpoint",
        "out/final.ckpt",
        "--data",
        "story.json",
    ];
    let first = ocn(&args, dir.path());
    assert_eq!(
        first.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let v = stdout_json(&first);
    let preds = v["predictions"].as_array().unwrap();
    assert_eq!(preds.len(), 1);
    let probs: Vec<f64> = preds[0]["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_f64().unwrap())
        .collect();
    assert_eq!(probs.len(), 4);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    let letter = preds[0]["answer"].as_str().unwrap();
    assert!(["A", "B", "C", "D"].contains(&letter));

    let second = ocn(&args, dir.path());
    assert_eq!(first.stdout, second.stdout);

    write(dir.path(), "broken.json", "{\"article\": ");
    let out = ocn(
        &[
            "predict",
            "--checkpoint",
            "out/final.ckpt",
            "--data",
            "broken.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = ocn(&["gradcheck"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["passed"], true);

    write(dir.path(), "ablated.json", r#"{"ablate_comparison": true}"#);
    let out = ocn(&["gradcheck", "--config", "ablated.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    assert_eq!(report["groups"].as_array().unwrap().len(), 11);
    assert_eq!(report["skipped"].as_array().unwrap().len(), 6);

    write(dir.path(), "corrupt.json", r#"{"corrupt_rule": "tanh"}"#);
    let out = ocn(&["gradcheck", "--config", "corrupt.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["passed"], false);
}

#[test]
fn synth_writes_deterministic_files() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "spec.json",
        r#"{"task": "lexical_overlap", "seed": 5, "count": 100}"#,
    );
    for out in ["a", "b"] {
        let o = ocn(
            &["synth", "--config", "spec.json", "--out", out],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(stdout_json(&o)["count"], 100);
    }
    let a = fs::read(dir.path().join("a/synth.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/synth.json")).unwrap());
    let records: Vec<Value> = serde_json::from_slice(&a).unwrap();
    assert_eq!(records.len(), 100);
}

#[test]
fn near_duplicate_options_differ_in_one_token() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "spec.json",
        r#"{"task": "near_duplicate_distractors", "seed": 2, "count": 50}"#,
    );
    let o = ocn(
        &["synth", "--config", "spec.json", "--out", "nd"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let records: Vec<Value> =
        serde_json::from_slice(&fs::read(dir.path().join("nd/synth.json")).unwrap()).unwrap();
    for r in &records {
        let opts: Vec<Vec<&str>> = r["options"][0]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| o.as_str().unwrap().split(' ').collect())
            .collect();
        for a in 0..opts.len() {
            for b in a + 1..opts.len() {
                let diff = opts[a].iter().zip(&opts[b]).filter(|(x, y)| x != y).count();
                assert_eq!(diff, 1, "{:?}", opts);
            }
        }
    }
}
