use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmkt_cli::RunManifest;
use serde_json::Value;

fn cmkt(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmkt"))
        .args(args)
        .arg("-q")
        .env("CMKT_CACHE_ROOT", root)
        .output()
        .expect("spawn cmkt")
}

/// Runs a command that must succeed and returns the run directory it prints.
fn ok(root: &Path, args: &[&str]) -> PathBuf {
    let out = cmkt(root, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    PathBuf::from(stdout.lines().last().expect("run directory on stdout").trim())
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {stderr}"));
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_manifest_complete(dir: &Path, command: &str) -> RunManifest {
    let m = RunManifest::read(dir).unwrap();
    assert_eq!(m.command, command);
    assert!(!m.config_hash.is_empty());
    for o in &m.outputs {
        assert!(dir.join(o).exists(), "{} missing {o}", dir.display());
    }
    m
}

fn raw_dataset(tmp: &Path, root: &Path) -> PathBuf {
    let raw = tmp.join("raw");
    ok(root, &["synth", "--out", s(&raw), "--n", "60", "--seed", "2", "--nuisance", "1.0"]);
    raw
}

#[test]
fn preprocess_is_reproducible_and_feeds_training() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let raw = raw_dataset(tmp.path(), &root);
    assert!(raw.join("labels.csv").exists() && raw.join("frames").is_dir() && raw.join("audio").is_dir());

    let pp = ok(&root, &["preprocess", "--raw", s(&raw)]);
    let m = assert_manifest_complete(&pp, "preprocess");
    assert!(pp.starts_with(root.join("runs")));
    let first = fs::read(pp.join("cache/train_visual.npy")).unwrap();
    let again = ok(&root, &["preprocess", "--raw", s(&raw)]);
    assert_eq!(pp, again);
    assert_eq!(first, fs::read(pp.join("cache/train_visual.npy")).unwrap());
    assert_eq!(RunManifest::read(&pp).unwrap().data_hash, m.data_hash);

    let train = ok(&root, &["train", "--method", "semantic-alignment", "--direction", "a2v", "--epochs", "1", "--data", s(&pp)]);
    let tm = assert_manifest_complete(&train, "train");
    assert_eq!(tm.data_hash, m.data_hash);
    for f in ["model/model.json", "metrics.json", "report.json", "history.json", "plan.json"] {
        assert!(train.join(f).exists(), "{f}");
    }
    let metrics: Value = serde_json::from_str(&fs::read_to_string(train.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["modality"], "visual");

    let eval = ok(&root, &["evaluate", "--model", s(&train), "--data", s(&pp), "--reps", "2"]);
    assert_manifest_complete(&eval, "evaluate");
    let em: Value = serde_json::from_str(&fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(em["accuracy"], metrics["accuracy"]);

    let explain = ok(
        &root,
        &["explain", "--model", s(&train), "--data", s(&pp), "--samples", "3", "--perturbations", "40", "--synthetic-mask"],
    );
    assert_manifest_complete(&explain, "explain");
    assert_eq!(fs::read_to_string(explain.join("explanations.jsonl")).unwrap().lines().count(), 3);
    let inter: Value = serde_json::from_str(&fs::read_to_string(explain.join("intersection.json")).unwrap()).unwrap();
    assert_eq!(inter["counts"].as_array().unwrap().len(), 3);
    assert!(!explain.join("frequency_histogram.json").exists());
}

#[test]
fn audio_explanations_include_frequency_histogram() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let train = ok(&root, &["train", "--method", "audio-only", "--epochs", "1", "--synthetic", "40"]);
    let explain = ok(&root, &["explain", "--model", s(&train), "--synthetic", "40", "--samples", "2", "--perturbations", "30"]);
    let hist: Value = serde_json::from_str(&fs::read_to_string(explain.join("frequency_histogram.json")).unwrap()).unwrap();
    assert_eq!(hist["all"].as_array().unwrap().len(), 80);
}

#[test]
fn search_retrain_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let cfg = tmp.path().join("search.toml");
    fs::write(
        &cfg,
        r#"
method = "visual-only"
[train]
epochs = 1
[data.synthetic]
n_samples = 40
seed = 3
[search]
trials = 3
sampler = "random"
top_k = 2
[search.space]
learning_rate = [1e-4, 1e-3]
weight_decay = [1e-6, 1e-4]
conv_layers = [1, 2]
filters = [2, 4]
kernel = [2, 3]
dense_layers = [1, 1]
neurons = [4, 8]
dropout = [0.0, 0.1]
"#,
    )
    .unwrap();
    let search = ok(&root, &["search", "--config", s(&cfg)]);
    assert_manifest_complete(&search, "search");
    let ledger = fs::read_to_string(search.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 1 + 3, "{ledger}");
    assert_eq!(fs::read_to_string(search.join("retrained.jsonl")).unwrap().lines().count(), 2);

    let again = ok(&root, &["search", "--config", s(&cfg)]);
    assert_eq!(again, search);
    assert_eq!(fs::read_to_string(search.join("ledger.csv")).unwrap().lines().count(), 4);

    let report = ok(&root, &["report", "--runs", s(&search), "--top-k", "2"]);
    assert_manifest_complete(&report, "report");
    let csv = fs::read_to_string(report.join("summary.csv")).unwrap();
    assert!(csv.starts_with("method,modality,count,metric,mean,max,min"));
    assert!(csv.lines().any(|l| l.starts_with("visual-only,visual,2,accuracy,")), "{csv}");

    let err = error_of(&cmkt(&root, &["report", "--runs", s(&search), "--top-k", "5"]));
    assert!(err["message"].as_str().unwrap().contains("--top-k 5"));
}

#[test]
fn noise_sweep_and_report_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let sweep = ok(
        &root,
        &[
            "noise-sweep", "--method", "visual-only", "--sigmas", "0,10", "--snrs", "inf,60", "--epochs", "1", "--synthetic", "40",
        ],
    );
    assert_manifest_complete(&sweep, "noise-sweep");
    let table = fs::read_to_string(sweep.join("noise_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4, "{table}");
    let report = ok(&root, &["report", "--runs", s(&sweep)]);
    assert_eq!(fs::read_to_string(report.join("noise_table.csv")).unwrap(), table);
}

#[test]
fn failures_are_structured() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");

    let err = error_of(&cmkt(&root, &["evaluate", "--model", s(&tmp.path().join("nothing")), "--synthetic", "20"]));
    assert_eq!(err["kind"], "missing_artifact");
    assert!(err["hint"].as_str().unwrap().contains("cmkt train"));

    let err = error_of(&cmkt(&root, &["train", "--method", "visual-only"]));
    assert_eq!(err["kind"], "missing_artifact");

    let out = cmkt(&root, &["train", "--method", "telepathy"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "usage");

    let raw = raw_dataset(tmp.path(), &root);
    let labels = fs::read_to_string(raw.join("labels.csv")).unwrap();
    let kept: Vec<&str> = labels.lines().filter(|l| !l.starts_with("7,")).collect();
    fs::write(raw.join("labels.csv"), kept.join("\n") + "\n").unwrap();
    let err = error_of(&cmkt(&root, &["preprocess", "--raw", s(&raw)]));
    assert_eq!(err["kind"], "dataset");
    assert!(err["message"].as_str().unwrap().contains("index 7"), "{err}");
}
