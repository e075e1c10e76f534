//! Helpers for driving the `npl` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL_SPEC: &str = "\
classes = 3
dim = 4
bag_count = 4
instances_per_bag = [30, 40]
supervised_count = 30
supervised_sources = 5
eval_count = 60
eval_sources = 3
seed = 5
";

pub const QUICK_RUN: &str = "\
[pipeline]
max_iterations = 3

[train]
max_epochs = 30
";

pub fn npl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npl"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn npl_ok(args: &[&str]) -> String {
    let out = npl(args);
    assert!(
        out.status.success(),
        "npl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates the small dataset into `root/data` and returns its file path.
pub fn small_dataset(root: &Path) -> PathBuf {
    let spec = write(root, "spec.toml", SMALL_SPEC);
    let dir = root.join("data");
    npl_ok(&["generate", "--config", s(&spec), "--out", s(&dir)]);
    dir.join("dataset.npd")
}
