#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use docrel::document::{save_documents, Split};
use docrel::synthetic::{generate, SyntheticConfig, SyntheticCorpus};

pub fn docrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docrel"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Runs the binary and panics with its stderr unless it succeeds.
pub fn docrel_ok(args: &[&str]) -> Output {
    let out = docrel(args);
    assert!(
        out.status.success(),
        "docrel {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn sha256(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(rel)
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub struct SyntheticFiles {
    pub corpus: SyntheticCorpus,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub schema: PathBuf,
}

/// Writes the train and dev splits of a generated corpus as documents.
pub fn write_synthetic(dir: &Path, config: &SyntheticConfig) -> SyntheticFiles {
    std::fs::create_dir_all(dir).unwrap();
    let corpus = generate(config);
    let files = SyntheticFiles {
        train: dir.join("train.jsonl"),
        dev: dir.join("dev.jsonl"),
        schema: dir.join("schema.toml"),
        corpus,
    };
    save_documents(&files.train, &files.corpus.split(Split::Train)).unwrap();
    save_documents(&files.dev, &files.corpus.split(Split::Dev)).unwrap();
    files.corpus.schema.save(&files.schema).unwrap();
    files
}

pub fn small_synthetic(dir: &Path) -> SyntheticFiles {
    write_synthetic(
        dir,
        &SyntheticConfig {
            docs: 24,
            train_docs: 16,
            dev_docs: 8,
            ..SyntheticConfig::default()
        },
    )
}

/// A model and schedule small enough to train in about a second.
pub const FAST: &[&str] = &[
    "--set",
    "d=8",
    "--set",
    "blocks=1",
    "--set",
    "heads=2",
    "--set",
    "conv_multiplier=2",
    "--set",
    "max_positions=256",
    "--set",
    "batch_size=8",
    "--set",
    "max_steps=12",
    "--set",
    "eval_every=4",
    "--set",
    "bpe_budget=120",
];

pub fn train_fast(files: &SyntheticFiles, out: &Path, seed: &str) -> Output {
    let mut args = vec![
        "train",
        "--train",
        s(&files.train),
        "--dev",
        s(&files.dev),
        "--schema",
        s(&files.schema),
        "--out",
        s(out),
        "--seed",
        seed,
    ];
    args.extend_from_slice(FAST);
    docrel_ok(&args)
}

pub fn micro_f1(metrics_jsonl: &Path) -> (f64, f64, f64) {
    let text = std::fs::read_to_string(metrics_jsonl).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if v["relation"] == "micro" {
            let f = |k: &str| v[k].as_f64().unwrap();
            return (f("precision"), f("recall"), f("f1"));
        }
    }
    panic!("no micro line in {}", metrics_jsonl.display());
}
