#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smsmix::synthetic::{self, SyntheticConfig};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_smsmix"));
    c.env("RUST_LOG", "error");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Synthetic benchmark files in `dir`.
pub fn fixture(dir: &Path, n_train: usize) -> PathBuf {
    let data = dir.join("data");
    synthetic::generate(&SyntheticConfig {
        n_train,
        eval_per_sense: 4,
        n_external: 80,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .write_to(&data)
    .unwrap();
    data
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// `--train-xml ... --train-gold ... --inventory ...`
pub fn corpus_args(data: &Path) -> Vec<String> {
    vec![
        "--train-xml".into(),
        p(&data.join("train.xml")).into(),
        "--train-gold".into(),
        p(&data.join("train.gold.txt")).into(),
        "--inventory".into(),
        p(&data.join("inventory.tsv")).into(),
    ]
}

pub fn run_owned(args: Vec<String>) -> Output {
    bin().args(args).output().expect("binary runs")
}
