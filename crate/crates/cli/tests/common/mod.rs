//! Helpers shared by the CLI integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn openworld(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_openworld"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = openworld(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub fn write_config(dir: &Path, name: &str, value: Value) -> String {
    fs::write(dir.join(name), value.to_string()).unwrap();
    name.to_string()
}

pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

/// Runs every command once under `dir`.
pub fn full_run(dir: &Path) {
    let cfg = write_config(
        dir,
        "c.json",
        serde_json::json!({"n_plates": 40, "n_scenes": 40, "experiment": {"runs": 5}}),
    );
    let c = cfg.as_str();
    ok(dir, &["--config", c, "--seed", "7", "--out", "data", "gen", "embeddings"]);
    ok(dir, &["--config", c, "--seed", "7", "--out", "plates", "gen", "plates"]);
    ok(dir, &["--config", c, "--seed", "7", "--out", "scenes", "gen", "scenes"]);
    ok(dir, &["--config", c, "--seed", "7", "--out", "train", "train", "--data", "data/embeddings"]);
    let with_head = ["--data", "data/embeddings", "--head", "train/head.bin"];
    for (out, cmd) in [("ret", "eval-retrieval"), ("ood", "eval-ood"), ("sys", "eval-system")] {
        let mut args = vec!["--config", c, "--seed", "7", "--out", out, cmd];
        args.extend(with_head);
        ok(dir, &args);
    }
    for id in ["add-classes", "samples-per-class", "ood-ingest"] {
        let mut args = vec!["--config", c, "--seed", "7", "--out", "exp", "experiment", id];
        args.extend(with_head);
        ok(dir, &args);
    }
    ok(dir, &["--config", c, "--seed", "7", "--out", "lpr", "eval-lpr", "--scenes", "scenes/scenes"]);
}

