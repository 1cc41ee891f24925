//! The ablation grid: every SAF modification over shared seeds and data.
//!
//! ```text
//! cargo run --release --example ablation_sweep [out-dir] [section.key=value ...]
//! ```
//!
//! Defaults to a short schedule (`run.total_iterations=1000`) and three
//! seeds; pass overrides to run the full protocol.

use std::path::PathBuf;

use saf_lab::cli::{ablate, ABLATION_HEADER};
use saf_lab::train::TrainConfig;

fn main() -> saf_lab::Result<()> {
    let mut args = std::env::args().skip(1).peekable();
    let out = match args.peek() {
        Some(a) if !a.contains('=') => PathBuf::from(args.next().unwrap()),
        _ => std::env::temp_dir().join("saf-lab-ablation"),
    };
    let mut cfg = TrainConfig::default();
    cfg.set("run.total_iterations", "1000")?;
    for arg in args {
        let (k, v) = arg.split_once('=').expect("override as section.key=value");
        cfg.set(k, v)?;
    }
    cfg.eval_every = cfg.total_iterations;

    let rows = ablate(&cfg, &[0, 1, 2], &out)?;
    println!("{ABLATION_HEADER}");
    for r in rows {
        println!("{}", r.csv_row());
    }
    println!("run directories under {}", out.display());
    Ok(())
}
