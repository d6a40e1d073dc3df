#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

pub fn toy_config() -> PathBuf {
    toy_dir().join("run.toml")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intent-space"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs and panics with stderr on failure; returns stdout.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trains the toy config into `out` and returns the run directory.
pub fn train(out: &Path, extra: &[&str]) -> PathBuf {
    let cfg = toy_config();
    let mut args = vec!["train", "--config", s(&cfg), "--output-dir", s(out)];
    args.extend_from_slice(extra);
    PathBuf::from(ok(&args).lines().last().unwrap().trim())
}

/// Writes the toy sentences of the given intents to `path`.
pub fn toy_subset(path: &Path, intents: &[&str]) {
    let text = std::fs::read_to_string(toy_dir().join("toy.jsonl")).unwrap();
    let keep: Vec<&str> = text
        .lines()
        .filter(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            intents.contains(&v["intent"].as_str().unwrap())
        })
        .collect();
    std::fs::write(path, keep.join("\n") + "\n").unwrap();
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
