#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gentest_cli::SUMMARY_FILE;

pub const TINY: &str = "\
# tiny smoke run
seed = 7
dataset.n_per_class = 100
generator.epochs = 2
classifier.epochs = 3
testgen.seeds_per_direction = 10
attack.seeds_per_direction = 10
adversarial.steps = 3
";

pub fn gentest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gentest")).args(args).output().expect("spawn gentest")
}

/// Every file under `root` keyed by relative path. The summary's timestamp
/// line is dropped.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            walk(root, &path, out);
            continue;
        }
        let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
        let mut bytes = fs::read(&path).unwrap();
        if rel == SUMMARY_FILE {
            let text = String::from_utf8(bytes).unwrap();
            bytes = text
                .lines()
                .filter(|l| !l.starts_with("timestamp ="))
                .map(|l| format!("{l}\n"))
                .collect::<String>()
                .into_bytes();
        }
        out.insert(rel, bytes);
    }
}

/// Paths whose contents differ between two snapshots, or exist in only one.
pub fn differences(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}
