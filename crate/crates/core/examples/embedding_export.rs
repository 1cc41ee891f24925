//! Train once, then project bottleneck features of both domains onto two
//! principal directions and write a CSV and an SVG scatter plot.
//!
//! ```text
//! cargo run --release --example embedding_export [out-dir]
//! ```

use std::path::PathBuf;

use saf_lab::cli::{bottleneck_embeddings, write_embeddings, EMBEDDINGS_SVG};
use saf_lab::data::Domain;
use saf_lab::train::{load_domains, train_run, TrainConfig};

fn main() -> saf_lab::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("saf-lab-embeddings"));
    let cfg = TrainConfig { total_iterations: 1500, eval_every: 1500, ..TrainConfig::default() };
    let (source, target) = load_domains(&cfg)?;

    for (name, saf) in [("without-saf", false), ("with-saf", true)] {
        let c = TrainConfig { saf_enabled: saf, ..cfg.clone() };
        let mut run = train_run(&c, &source, &target, |_| Ok(()))?;
        let z = bottleneck_embeddings(&mut run.bundle, &source, &target)?;
        let domains: Vec<Domain> = source.domain_tags.iter().chain(&target.domain_tags).copied().collect();
        let labels: Vec<usize> = source.labels_or_err("export")?.iter().chain(target.labels_or_err("export")?).copied().collect();
        let dir = out.join(name);
        write_embeddings(&z, &domains, &labels, &dir)?;
        println!(
            "{name}: target accuracy {:.4}, plot {}",
            run.records.last().expect("final evaluation").tgt_acc,
            dir.join(EMBEDDINGS_SVG).display()
        );
    }
    Ok(())
}
