//! Two-moons with the target rotated 35°: source-only, DANN and MDD, each
//! with and without SAF, over five seeds.
//!
//! ```text
//! cargo run --release --example moons_adaptation [section.key=value ...]
//! ```
//!
//! Overrides use the config file's keys, e.g. `run.total_iterations=1000`;
//! `seeds=A..B` picks the seed range (default `0..5`).

use std::time::Instant;

use saf_lab::nn::Backbone;
use saf_lab::train::{load_domains, train_run, TrainConfig};

fn main() -> saf_lab::Result<()> {
    let mut base = TrainConfig::default();
    let mut seeds = 0..5;
    for arg in std::env::args().skip(1) {
        let (key, value) = arg.split_once('=').expect("override as section.key=value");
        if key == "seeds" {
            let (a, b) = value.split_once("..").expect("seeds=A..B");
            seeds = a.parse().expect("seed")..b.parse().expect("seed");
        } else {
            base.set(key, value)?;
        }
    }
    base.eval_every = base.total_iterations;
    let (source, target) = load_domains(&base)?;

    let variants: [(&str, Backbone, bool, f64); 5] = [
        ("source-only", Backbone::Dann, false, 0.0),
        ("dann", Backbone::Dann, false, base.lambda_d_max),
        ("dann+saf", Backbone::Dann, true, base.lambda_d_max),
        ("mdd", Backbone::Mdd, false, base.lambda_d_max),
        ("mdd+saf", Backbone::Mdd, true, base.lambda_d_max),
    ];
    println!("{:<12} {:>8}  per-seed target accuracy", "variant", "mean");
    for (name, backbone, saf, lambda_d_max) in variants {
        let start = Instant::now();
        let mut accs = Vec::new();
        for seed in seeds.clone() {
            let cfg = TrainConfig {
                backbone,
                saf_enabled: saf,
                lambda_d_max,
                seed,
                ..base.clone()
            };
            let run = train_run(&cfg, &source, &target, |_| Ok(()))?;
            accs.push(run.records.last().expect("final evaluation").tgt_acc);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let cells: Vec<String> = accs.iter().map(|a| format!("{:.4}", a)).collect();
        println!(
            "{name:<12} {mean:>8.4}  {}  ({:.1}s)",
            cells.join(" "),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
