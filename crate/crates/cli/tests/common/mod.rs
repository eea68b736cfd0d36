#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/mini")
        .canonicalize()
        .unwrap()
}

/// Writes a config over the bundled fixture with its index inside `dir`.
/// `extra` is appended verbatim.
pub fn write_config(dir: &Path, train_qrels: Option<&Path>, extra: &str) -> PathBuf {
    let f = fixture_dir();
    let p = |name: &str| f.join(name).display().to_string();
    let qrels = train_qrels.map_or_else(|| p("train_qrels.txt"), |q| q.display().to_string());
    let text = format!(
        r#"seed = 42

[paths]
collection = "{}"
train_queries = "{}"
train_qrels = "{qrels}"
test_queries = "{}"
test_qrels = "{}"
target_run = "{}"
index_dir = "{}"
train_embeddings = "{}"
test_embeddings = "{}"
folds = "{}"

[qpp]
n = 20

[evaluation]
lambdas = [0.0, 0.25, 0.5, 0.75, 1.0]
ks = [1, 2, 3, 5]
{extra}
"#,
        p("collection.tsv"),
        p("train_queries.tsv"),
        p("test_queries.tsv"),
        p("test_qrels.txt"),
        p("target_run.txt"),
        dir.join("index").display(),
        p("train_embeddings.txt"),
        p("test_embeddings.txt"),
        p("folds.tsv"),
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

pub fn qvqpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvqpp"))
        .args(args)
        .output()
        .expect("running qvqpp")
}

/// Runs and panics with stderr on failure.
pub fn ok(args: &[&str]) -> Output {
    let out = qvqpp(args);
    assert!(
        out.status.success(),
        "qvqpp {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
