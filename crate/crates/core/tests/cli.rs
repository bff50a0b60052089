use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn ecqg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecqg"))
        .args(args)
        .env_remove("ECQG_NER_DICT")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/squad")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(p: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(p).unwrap()))
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn build(out: &Path, seed: &str) -> Output {
    ecqg(&[
        "build-data",
        "--squad",
        s(&fixture()),
        "--out",
        s(out),
        "--ner",
        "stub",
        "--seed",
        seed,
        "--val-fraction",
        "0.2",
    ])
}

#[test]
fn build_data_is_reproducible_and_records_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = build(&out, "5");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let files = ["train.jsonl", "validation.jsonl", "test.jsonl", "stats.json"];
    let first: Vec<String> = files.iter().map(|f| digest(&out.join(f))).collect();
    assert_eq!(code(&build(&out, "5")), 0);
    let second: Vec<String> = files.iter().map(|f| digest(&out.join(f))).collect();
    assert_eq!(first, second);

    let meta = json(&out.join("meta.json"));
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["ner_provider"], "dictionary");
    let inputs = meta["inputs"].as_object().unwrap();
    assert_eq!(inputs.len(), 2);
    let train_src = fixture().join("train-v2.0.json");
    assert_eq!(inputs[&train_src.display().to_string()], digest(&train_src));
    assert!(meta["command"].as_array().unwrap().iter().any(|a| a == "--val-fraction"));
    // inputs untouched
    assert_eq!(inputs[&train_src.display().to_string()], digest(&train_src));

    assert_eq!(code(&build(&dir.path().join("other"), "6")), 0);
    assert_ne!(digest(&out.join("validation.jsonl")), digest(&dir.path().join("other/validation.jsonl")));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(code(&ecqg(&["build-data", "--squad", "x"])), 1);
    assert_eq!(code(&ecqg(&["build-data", "--squad", "x", "--out", "y", "--ner", "spacy"])), 1);
    assert_eq!(code(&ecqg(&["frobnicate"])), 1);
    let o = ecqg(&["gradcheck", "--component", "decoder"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fusion"));
    assert_eq!(code(&ecqg(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"data": [{"title": "T", "paragraphs": [{"qas": []}]}]}"#).unwrap();
    let o = ecqg(&["build-data", "--squad", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("data[0].paragraphs[0]"));
}

fn write_records(p: &Path, rows: &[(&str, &str)]) {
    let body: String = rows.iter().map(|(id, t)| format!("{{\"id\":\"{id}\",\"text\":\"{t}\"}}\n")).collect();
    std::fs::write(p, body).unwrap();
}

#[test]
fn eval_identity_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("ref.jsonl");
    write_records(&refs, &[("a", "When did Beyonce rise to fame?"), ("b", "Who discovered oxygen in 1773?")]);
    let (out, table) = (dir.path().join("report.json"), dir.path().join("table.md"));
    let o = ecqg(&["eval", "--pred", s(&refs), "--ref", s(&refs), "--out", s(&out), "--table", s(&table)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    for k in ["bleu1", "bleu2", "bleu3", "bleu4", "rouge_l"] {
        assert_eq!(r[k], 100.0, "{k}");
    }
    assert_eq!(r["n"], 2);
    assert_eq!(r["provenance"]["inputs"][s(&refs)], digest(&refs));
    let t = std::fs::read_to_string(&table).unwrap();
    assert!(t.starts_with("| Model | BLEU-1 |"));
    assert!(t.contains("| model | 100.00 |"));

    let preds = dir.path().join("pred.jsonl");
    write_records(&preds, &[("a", "When?")]);
    let o = ecqg(&["eval", "--pred", s(&preds), "--ref", s(&refs), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("\"b\""));
}

#[test]
fn gradcheck_fusion_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc.json");
    let o = ecqg(&[
        "--threads",
        "1",
        "gradcheck",
        "--component",
        "fusion",
        "--step",
        "1e-5",
        "--tol",
        "1e-4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS fusion"));
    let r = json(&out);
    assert_eq!(r["passed"], true);
    assert_eq!(r["seeds"].as_array().unwrap().len(), 5);
    // a tolerance nothing can meet reports failure through the exit code
    assert_eq!(code(&ecqg(&["gradcheck", "--component", "fusion", "--tol", "1e-300"])), 2);
}

#[test]
fn train_then_generate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&build(&data, "1")), 0);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"base_model_size":"toy","d_model":8,"learning_rate":0.003,"max_steps":4,"batch_size":8,"seeds":[3]}"#,
    )
    .unwrap();
    let ckpt = dir.path().join("ckpt");
    let o = ecqg(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt), "--mode", "qv_only"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let history = json(&ckpt.join("history.json"));
    assert_eq!(history["total_steps"], 4);
    let prov = json(&ckpt.join("provenance.json"));
    assert_eq!(prov["inputs"].as_object().unwrap().len(), 3);
    assert!(prov["command"].as_array().unwrap().iter().any(|a| a == "qv_only"));
    assert_eq!(
        code(&ecqg(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt), "--mode", "both"])),
        1
    );

    let o = ecqg(&[
        "generate",
        "--ckpt",
        s(&ckpt),
        "--entity",
        "Warsaw",
        "--context",
        "Warsaw is the capital of Poland.",
        "--greedy",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 1);
    let beam = ecqg(&[
        "generate",
        "--ckpt",
        s(&ckpt),
        "--entity",
        "Warsaw",
        "--context",
        "Warsaw is the capital of Poland.",
        "--beam",
        "1",
    ]);
    assert_eq!(beam.stdout, o.stdout, "beam 1 equals greedy");
    assert_eq!(
        code(&ecqg(&["generate", "--ckpt", s(&ckpt), "--entity", "W", "--context", "W", "--greedy", "--beam", "2"])),
        1
    );

    let preds = dir.path().join("predictions.jsonl");
    let test = data.join("test.jsonl");
    let o = ecqg(&["generate", "--ckpt", s(&ckpt), "--input", s(&test), "--out", s(&preds), "--beam", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let n_test = std::fs::read_to_string(&test).unwrap().lines().count();
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), n_test);
    assert!(dir.path().join("predictions.provenance.json").exists());

    // test questions as references: every id matches
    let refs = dir.path().join("refs.jsonl");
    let body: String = std::fs::read_to_string(&test)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            format!("{}\n", serde_json::json!({"id": v["id"], "text": v["question"]}))
        })
        .collect();
    std::fs::write(&refs, body).unwrap();
    let report = dir.path().join("report.json");
    assert_eq!(code(&ecqg(&["eval", "--pred", s(&preds), "--ref", s(&refs), "--out", s(&report)])), 0);
    assert_eq!(json(&report)["n"], n_test);
}
