use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cosfire_hash::imaging::{save_rawf32, Image};
use cosfire_hash::retrieval::{HashCode, RetrievalIndex};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cosfire-hash"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn flops_prints_reference_total() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["--work-dir", dir.path().to_str().unwrap(), "flops", "--bits", "72"]);
    assert!(out.contains("374,572"), "{out}");
    assert!(out.contains("1,139,692,788"), "{out}");
    let json = ok(&["--work-dir", dir.path().to_str().unwrap(), "--json", "flops", "--layers", "372,300,200,72"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["hashing"]["total"], 374_572);
}

#[test]
fn synthetic_pipeline_end_to_end_and_rerun_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", data.to_str().unwrap(), "--per-class", "20"]);
    let config = data.join("config.json");
    let c = config.to_str().unwrap();
    let stages = ["preprocess", "build-bank", "describe", "train", "sweep-threshold", "encode"];
    for s in stages {
        ok(&["--config", c, s]);
    }
    let report = ok(&["--config", c, "--json", "evaluate"]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["test"]["map_at_k"].as_f64().unwrap() > 0.9, "{report}");

    let first = tree(&data.join("work"));
    for s in stages {
        ok(&["--config", c, s]);
    }
    ok(&["--config", c, "--json", "evaluate"]);
    assert_eq!(first, tree(&data.join("work")));

    let codes = data.join("work/codes/train.codes");
    let (index, _) = RetrievalIndex::load(&codes).unwrap();
    let record = index.ids()[0].to_string();
    let json = ok(&[
        "--config", c, "--json", "--top-n", "1", "query", "--codes", codes.to_str().unwrap(), "--record", &record,
    ]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["hits"].as_array().unwrap().len(), 1);
    assert_eq!(v["hits"][0]["distance"], 0);
}

fn write_codes(path: &Path, codes: Vec<u8>, labels: Vec<usize>) {
    let codes: Vec<HashCode> = codes
        .iter()
        .map(|c| HashCode::from_bools(&(0..8).map(|j| c >> j & 1 == 1).collect::<Vec<_>>()))
        .collect();
    let ids = (0..codes.len() as u32).collect();
    let names: Vec<String> = ["a", "b"].map(String::from).to_vec();
    RetrievalIndex::from_parts(8, codes, labels, ids).unwrap().save(path, &names).unwrap();
}

#[test]
fn evaluate_on_separable_codes_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    let codes = work.join("codes");
    fs::create_dir_all(&codes).unwrap();
    let (a, b) = (0b0000_1111u8, 0b1111_0000u8);
    write_codes(&codes.join("train.codes"), vec![a, a, b, b, a], vec![0, 0, 1, 1, 0]);
    write_codes(&codes.join("test.codes"), vec![a, b, b], vec![0, 1, 1]);
    let cfg = work.join("config.json");
    fs::write(&cfg, r#"{"classes": ["a", "b"], "bits": 8, "k_eval": 2, "work_dir": "."}"#).unwrap();
    let json = ok(&["--config", cfg.to_str().unwrap(), "--json", "evaluate"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["test"]["map_at_k"], 1.0);
    assert_eq!(v["map_at_r_average"], 1.0);
    assert_eq!(v["separability_test_vs_train"], 0.0);
    assert!(v.get("distances_test").is_none(), "one test item in class a leaves no within-class pairs");
    assert!(work.join("reports/map_at_r.csv").exists());
    assert!(work.join("reports/flops.csv").exists());
}

#[test]
fn preprocess_three_images_rerun_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::from("path,label,split\n");
    for (i, split) in ["train", "valid", "test"].iter().enumerate() {
        let img = Image::from_fn(16, 16, |x, y| {
            ((x * 7 + y * 3 + i) % 5) as f64 + if x == 8 && y == 8 { 40.0 } else { 0.0 }
        })
        .unwrap();
        let p = dir.path().join(format!("img{i}.rf32"));
        save_rawf32(&img, &p).unwrap();
        lines += &format!("{},Compact,{split}\n", p.display());
    }
    let manifest = dir.path().join("m.csv");
    fs::write(&manifest, lines).unwrap();
    let work = dir.path().join("work");
    let args = ["--work-dir", work.to_str().unwrap(), "preprocess", "--manifest", manifest.to_str().unwrap()];
    ok(&args);
    let clipped = work.join("clipped");
    let rf32 = fs::read_dir(&clipped)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "rf32"))
        .count();
    assert_eq!(rf32, 3);
    let first = tree(&work);
    ok(&args);
    assert_eq!(first, tree(&work));
}

#[test]
fn empty_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    fs::write(&manifest, "path,label,split\n").unwrap();
    let out = run(&["--work-dir", dir.path().to_str().unwrap(), "preprocess", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["evaluate", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().to_str().unwrap();
    assert_eq!(run(&["--work-dir", w, "preprocess"]).status.code(), Some(1));
    assert_eq!(run(&["--work-dir", w, "flops", "--layers", "5"]).status.code(), Some(1));
    assert_eq!(run(&["--config", "/nonexistent/cfg.json", "flops"]).status.code(), Some(1));
}

#[test]
fn missing_upstream_artifact_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--work-dir", dir.path().to_str().unwrap(), "describe"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bank file not found"), "{err}");
    assert!(err.contains("cosfire-hash build-bank"), "{err}");

    let codes = dir.path().join("codes");
    fs::create_dir_all(&codes).unwrap();
    let out = run(&["--work-dir", dir.path().to_str().unwrap(), "evaluate"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("codes file not found"));
}
