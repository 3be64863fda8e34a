use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iotyper::ast::Node;
use iotyper::fixtures::{fig1a_dataset, fig1a_tree};
use iotyper::synthetic::{corpus, CorpusSpec};
use serde_json::Value;
use tempfile::TempDir;

fn iotyper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iotyper"))
        .args(args)
        .env("IOTYPER_THREADS", "1")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = iotyper(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn put(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json_file(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn tree_file(dir: &TempDir, name: &str, tree: &Node) -> PathBuf {
    put(dir, name, &serde_json::to_string(tree).unwrap())
}

#[test]
fn transform_matches_golden_at_k2() {
    let dir = TempDir::new().unwrap();
    let ast = tree_file(&dir, "fig1a.json", &fig1a_tree());
    let out = dir.path().join("aug.json");
    ok(&["transform", "--ast", s(&ast), "--max-children", "2", "--out", s(&out)]);
    let golden: Value = serde_json::from_str(include_str!("../../core/tests/data/fig2b.json")).unwrap();
    assert_eq!(json_file(&out), golden);
}

#[test]
fn transform_large_k_is_identity_and_idempotent() {
    let dir = TempDir::new().unwrap();
    let ast = tree_file(&dir, "t.json", &fig1a_tree());
    let wide = ok(&["transform", "--ast", s(&ast), "--max-children", "50"]).stdout;
    let plain = ok(&["transform", "--ast", s(&ast), "--no-restructuring"]).stdout;
    assert_eq!(wide, plain);

    let once = dir.path().join("once.json");
    ok(&["transform", "--ast", s(&ast), "--max-children", "2", "--out", s(&once)]);
    let root = json_file(&once)["root"].clone();
    let restructured = put(&dir, "r.json", &root.to_string());
    let twice = dir.path().join("twice.json");
    ok(&["transform", "--ast", s(&restructured), "--max-children", "2", "--out", s(&twice)]);
    assert_eq!(json_file(&once), json_file(&twice));
}

#[test]
fn missing_dataset_exits_1() {
    let dir = TempDir::new().unwrap();
    let out = iotyper(&[
        "train",
        "--dataset",
        s(&dir.path().join("nope.json")),
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn malformed_dataset_exits_1() {
    let dir = TempDir::new().unwrap();
    let bad = put(&dir, "bad.json", "{\"programs\": [");
    let out = iotyper(&["train", "--dataset", s(&bad), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn zero_epochs_writes_model_and_warns() {
    let dir = TempDir::new().unwrap();
    let data = put(&dir, "d.json", &fig1a_dataset().to_json());
    let model = dir.path().join("m.json");
    let out = ok(&["train", "--dataset", s(&data), "--out", s(&model), "--epochs", "0"]);
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("epochs"));
    assert_eq!(json_file(&model)["variant"], "childsum");
    let metrics = json_file(&dir.path().join("m.metrics.json"));
    assert!(metrics["aggregate"]["labels"].as_u64().unwrap() == 3);
    // The untrained model still predicts.
    let ast = tree_file(&dir, "t.json", &fig1a_tree());
    let lines = ok(&["predict", "--model", s(&model), "--ast", s(&ast)]).stdout;
    assert_eq!(String::from_utf8(lines).unwrap().lines().count(), 3);
}

#[test]
fn vocab_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    let data = put(&dir, "d.json", &fig1a_dataset().to_json());
    let model = dir.path().join("m.json");
    ok(&["train", "--dataset", s(&data), "--out", s(&model), "--epochs", "1"]);

    let mut other: Value = serde_json::from_str(&fig1a_dataset().to_json()).unwrap();
    other["vocab_version"] = "someone-elses-vocab".into();
    let other = put(&dir, "other.json", &other.to_string());
    let out = iotyper(&["evaluate", "--model", s(&model), "--dataset", s(&other)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let mut wire = json_file(&model);
    wire["vocab_version"] = "someone-elses-vocab".into();
    let foreign = put(&dir, "foreign.json", &wire.to_string());
    let ast = tree_file(&dir, "t.json", &fig1a_tree());
    let out = iotyper(&["predict", "--model", s(&foreign), "--ast", s(&ast)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn overfit_fig1a_then_predict() {
    let dir = TempDir::new().unwrap();
    let data = put(&dir, "d.json", &fig1a_dataset().to_json());
    let model = dir.path().join("m.json");
    ok(&["train", "--dataset", s(&data), "--out", s(&model), "--epochs", "200"]);
    let ast = tree_file(&dir, "t.json", &fig1a_tree());

    let text = String::from_utf8(ok(&["predict", "--model", s(&model), "--ast", s(&ast)]).stdout).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let names: Vec<&str> = rows.iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["a", "b", "c"]);
    for r in &rows {
        let preds = r["predictions"].as_array().unwrap();
        assert_eq!(preds.len(), 3);
        assert_eq!(preds[0]["type"], "int", "{r}");
    }

    let text = String::from_utf8(ok(&["predict", "--model", s(&model), "--ast", s(&ast), "--top-k", "21"]).stdout).unwrap();
    for line in text.lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        let preds = r["predictions"].as_array().unwrap();
        assert_eq!(preds.len(), 21);
        let total: f64 = preds.iter().map(|p| p["prob"].as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(preds.windows(2).all(|w| w[0]["prob"].as_f64() >= w[1]["prob"].as_f64()));
    }
}

#[test]
fn predict_without_identifiers_prints_nothing() {
    let dir = TempDir::new().unwrap();
    let data = put(&dir, "d.json", &fig1a_dataset().to_json());
    let model = dir.path().join("m.json");
    ok(&["train", "--dataset", s(&data), "--out", s(&model), "--epochs", "1"]);
    let bare = Node::new(0, "Module", vec![Node::new(1, "Pass", vec![])]);
    let ast = tree_file(&dir, "bare.json", &bare);
    let out = ok(&["predict", "--model", s(&model), "--ast", s(&ast)]);
    assert!(out.stdout.is_empty());
}

#[test]
fn evaluate_reports_monotone_topk() {
    let dir = TempDir::new().unwrap();
    let data = put(&dir, "d.json", &corpus(&CorpusSpec::new(6, 3).statements(2, 4)).to_json());
    let model = dir.path().join("m.json");
    ok(&["train", "--dataset", s(&data), "--out", s(&model), "--epochs", "3", "--variant", "nary"]);
    let report = dir.path().join("r.json");
    ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--dataset",
        s(&data),
        "--top-k",
        "21",
        "--out",
        s(&report),
    ]);
    let r = json_file(&report);
    let acc: Vec<f64> = (1..=21).map(|k| r["topk"][k.to_string()].as_f64().unwrap()).collect();
    assert!(acc.windows(2).all(|w| w[0] <= w[1]), "{acc:?}");
    assert_eq!(acc[20], 1.0);
}

#[test]
fn training_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let data = put(&dir, "d.json", &corpus(&CorpusSpec::new(6, 4).statements(2, 4)).to_json());
    let run = |name: &str| {
        let model = dir.path().join(name);
        ok(&[
            "train", "--dataset", s(&data), "--out", s(&model), "--epochs", "3", "--folds", "2", "--seed", "11",
        ]);
        (fs::read(&model).unwrap(), fs::read(model.with_extension("metrics.json")).unwrap())
    };
    let first = run("a.json");
    let second = run("b.json");
    assert!(first == second, "reruns differ");
    let metrics: Value = serde_json::from_slice(&first.1).unwrap();
    assert_eq!(metrics["folds"].as_array().unwrap().len(), 2);
}

#[test]
fn split_file_selects_training_programs() {
    let dir = TempDir::new().unwrap();
    let ds = corpus(&CorpusSpec::new(6, 5).statements(2, 3));
    let paths: Vec<&str> = ds.programs.iter().map(|p| p.path.as_str()).collect();
    let data = put(&dir, "d.json", &ds.to_json());
    let split = serde_json::json!({"train": &paths[..4], "test": &paths[4..]});
    let split = put(&dir, "split.json", &split.to_string());
    let model = dir.path().join("m.json");
    ok(&["train", "--dataset", s(&data), "--out", s(&model), "--epochs", "2", "--split-file", s(&split)]);
    let metrics = json_file(&dir.path().join("m.metrics.json"));
    let test_labels: usize = ds.programs[4..].iter().map(|p| p.labels.len()).sum();
    assert_eq!(metrics["aggregate"]["labels"].as_u64().unwrap() as usize, test_labels);

    let bad = put(&dir, "bad.json", r#"{"train": ["missing.py"], "test": []}"#);
    let out = iotyper(&["train", "--dataset", s(&data), "--out", s(&model), "--split-file", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
}
