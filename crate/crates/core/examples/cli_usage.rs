//! The command-line workflow end to end, driven in-process: generate data,
//! train two seeds, evaluate the saved model and export embeddings.
//!
//! ```text
//! cargo run --release --example cli_usage [work-dir]
//! ```
//!
//! Each step is the same as running `saf-lab <args>` from a shell.

use std::path::PathBuf;

fn saf_lab(args: &[&str]) {
    println!("$ saf-lab {}", args.join(" "));
    let code = saf_lab::cli::run(std::iter::once("saf-lab").chain(args.iter().copied()));
    assert_eq!(code, 0, "command failed with status {code}");
}

fn main() {
    let work = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("saf-lab-cli"));
    let w = |p: &str| work.join(p).to_string_lossy().into_owned();
    let short = ["--set", "run.total_iterations=600", "--set", "run.eval_every=200"];

    saf_lab(&["gen-data", "--kind", "moons", "--rotation", "35", "--seed", "7", "--out", &w("data")]);
    let (src, tgt) = (w("data/source.csv"), w("data/target.csv"));

    let mut train = vec!["train", "--source", &src, "--target", &tgt, "--seeds", "0,1", "--out"];
    let runs = w("runs");
    train.push(&runs);
    train.extend(short);
    saf_lab(&train);

    let (cfg, params) = (w("runs/config.cfg"), w("runs/seed-0/params.txt"));
    saf_lab(&["eval", "--config", &cfg, "--params", &params]);
    saf_lab(&["export-embeddings", "--config", &cfg, "--params", &params, "--out", &w("embeddings")]);
    println!("outputs under {}", work.display());
}
