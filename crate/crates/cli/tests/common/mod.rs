//! Shared helpers for driving the `sevade` binary.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn sevade<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_sevade"))
        .args(args)
        .env_remove("SEVADE_API_KEY")
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn sevade")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Generates the separable corpus and trains a baseline model into `dir`.
pub fn train_model(dir: &Path) -> PathBuf {
    let corpus = dir.join("rationales.jsonl");
    let model = dir.join("model.bin");
    let (c, m) = (corpus.to_str().unwrap(), model.to_str().unwrap());
    let out = sevade(["gen-corpus", "--n", "200", "--seed", "2024", "--out", c]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = sevade(["train-ra", "--seed", "17", "--rationales", c, "--out", m]);
    assert!(out.status.success(), "{}", stderr(&out));
    model
}

/// Mock-backed run over `dataset` into `out_dir` with extra flags.
pub fn run_fixture(dataset: &str, model: Option<&Path>, out_dir: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<std::ffi::OsString> = vec![
        "run".into(),
        "--dataset".into(),
        fixture(dataset).into(),
        "--mock-script".into(),
        fixture("mock_script.json").into(),
        "--search-fixtures".into(),
        fixture("search").into(),
        "--output-dir".into(),
        out_dir.into(),
    ];
    if let Some(m) = model {
        args.push("--adjudicator-model".into());
        args.push(m.into());
    }
    args.extend(extra.iter().map(Into::into));
    sevade(args)
}

pub fn read_lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn event_kinds(transcript: &Value) -> Vec<String> {
    transcript["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["event"].as_str().unwrap().to_string())
        .collect()
}
