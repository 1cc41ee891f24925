//! Command-line surface of the `saf-lab` binary.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for runtime failures.
//! `SAF_LAB_THREADS` caps how many seeds or variants run at once.

mod commands;
mod manifest;
mod pca;
mod pool;
mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    ablate, ablation_variants, bottleneck_embeddings, domain_pair, eval_params, export_embeddings,
    gen_data, load_bundle, train_seeds, train_seeds_on, write_embeddings, AblationRow, SeedOutcome,
    ABLATION_FILE, ABLATION_HEADER, DATA_SPEC_FILE, EMBEDDINGS_CSV, EMBEDDINGS_SVG, SOURCE_CSV,
    TARGET_CSV,
};
pub use manifest::{data_hash, mean_sd, RunManifest, SeedResult, MANIFEST_FILE};
pub use pca::{pca_2d, Pca, PCA_MAX_ITERATIONS, PCA_TOLERANCE};
pub use pool::{run_all, worker_count, THREADS_ENV};
pub use svg::{scatter_svg, Point};

use crate::data::Generator;
use crate::error::Error;
use crate::train::{run_experiment, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "saf-lab", version, about = "Unsupervised domain adaptation with shuffle-augmented features")]
pub struct Cli {
    /// Print the default configuration, every key documented, and exit.
    #[arg(long)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a source/target pair of synthetic domains.
    GenData(GenDataArgs),
    /// Train one run, or one run per seed with a manifest.
    Train(TrainArgs),
    /// Evaluate saved parameters on the configured domains.
    Eval(EvalArgs),
    /// Run the SAF ablation grid over shared seeds and data.
    Ablate(AblateArgs),
    /// Project bottleneck features to 2-D and write CSV plus SVG.
    ExportEmbeddings(ExportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Moons,
    Blobs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value = "moons")]
    pub kind: Kind,
    #[arg(long, default_value_t = 400)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    /// Target rotation in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rotation: f64,
    /// Target translation as `x,y`.
    #[arg(long, default_value = "0,0", allow_negative_numbers = true)]
    pub translate: String,
    /// Target scale factor.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Configuration flags shared by the commands that train or load models.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set run.total_iterations=500`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Labelled source CSV, replacing the generator.
    #[arg(long, requires = "target")]
    pub source: Option<PathBuf>,
    /// Labelled target CSV; its labels are used for evaluation only.
    #[arg(long, requires = "source")]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Seeds as `A..B` (inclusive) or `a,b,c`. Writes one directory per
    /// seed and a manifest.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Switch SAF on or off regardless of the config.
    #[arg(long, value_enum)]
    pub saf: Option<Switch>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub params: PathBuf,
    /// Write the metrics CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value = "0..4")]
    pub seeds: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a command, split by exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

/// `A..B` (inclusive), or a comma-separated list.
pub fn parse_seeds(spec: &str) -> std::result::Result<Vec<u64>, String> {
    let bad = || format!("bad seed list `{spec}` (use A..B or a,b,c)");
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    let seeds: Vec<u64> = spec
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect::<std::result::Result<_, _>>()?;
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(format!("duplicate seeds in `{spec}`"));
    }
    Ok(seeds)
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.parse().map_err(|_| format!("bad number `{a}`"))?,
            b.parse().map_err(|_| format!("bad number `{b}`"))?,
        ]),
        _ => Err(format!("expected `x,y`, got `{s}`")),
    }
}

/// Config file, then `--set` overrides, then data flags; later wins.
pub fn resolve_config(args: &ConfigArgs) -> std::result::Result<TrainConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects SECTION.KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let (Some(s), Some(t)) = (&args.source, &args.target) {
        cfg.data.source_csv = Some(s.clone());
        cfg.data.target_csv = Some(t.clone());
    }
    Ok(cfg)
}

fn run_command(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::GenData(a) => {
            let translation = parse_pair(&a.translate).map_err(Failure::Usage)?;
            let generator = match a.kind {
                Kind::Moons => Generator::TwoMoons,
                Kind::Blobs => Generator::GaussianBlobs,
            };
            let (s, t) = domain_pair(generator, a.samples, a.noise, a.seed, a.rotation, translation, a.scale);
            s.validate().and(t.validate()).map_err(|e| Failure::Usage(e.to_string()))?;
            let (sp, tp) = gen_data(&s, &t, &a.out)?;
            println!("wrote {} and {}", sp.display(), tp.display());
        }
        Command::Train(a) => {
            let mut cfg = resolve_config(&a.cfg)?;
            if let Some(s) = a.saf {
                cfg.saf_enabled = matches!(s, Switch::On);
            }
            match &a.seeds {
                None => {
                    let out = run_experiment(&cfg, &a.out)?;
                    println!(
                        "seed {}: target accuracy {:.4} ({})",
                        cfg.seed,
                        out.final_record.tgt_acc,
                        out.dir.display()
                    );
                }
                Some(spec) => {
                    let seeds = parse_seeds(spec).map_err(Failure::Usage)?;
                    let (manifest, outcomes) = train_seeds(&cfg, &seeds, &a.out)?;
                    let mut first_err = None;
                    for (seed, r) in outcomes {
                        match r {
                            Ok(rec) => println!("seed {seed}: target accuracy {:.4}", rec.tgt_acc),
                            Err(e) => {
                                eprintln!("seed {seed}: {e}");
                                first_err.get_or_insert(e);
                            }
                        }
                    }
                    println!(
                        "mean {:.4} sd {:.4} ({})",
                        manifest.mean_tgt_acc,
                        manifest.sd_tgt_acc,
                        a.out.join(MANIFEST_FILE).display()
                    );
                    if let Some(e) = first_err {
                        return Err(Failure::Runtime(e));
                    }
                }
            }
        }
        Command::Eval(a) => {
            let cfg = resolve_config(&a.cfg)?;
            let csv = eval_params(&cfg, &a.params)?;
            match &a.out {
                Some(p) => std::fs::write(p, csv).map_err(|e| Error::io(p, e))?,
                None => print!("{csv}"),
            }
        }
        Command::Ablate(a) => {
            let cfg = resolve_config(&a.cfg)?;
            let seeds = parse_seeds(&a.seeds).map_err(Failure::Usage)?;
            let rows = ablate(&cfg, &seeds, &a.out)?;
            println!("{ABLATION_HEADER}");
            for r in &rows {
                println!("{}", r.csv_row());
            }
        }
        Command::ExportEmbeddings(a) => {
            let cfg = resolve_config(&a.cfg)?;
            export_embeddings(&cfg, &a.params, &a.out)?;
            println!("wrote {}", a.out.join(EMBEDDINGS_SVG).display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if cli.print_config {
        print!("{}", TrainConfig::default().render());
        return EXIT_OK;
    }
    let Some(cmd) = cli.command else {
        eprintln!("saf-lab: no command given (try --help)");
        return EXIT_USAGE;
    };
    match run_command(cmd) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("saf-lab: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("saf-lab: {e}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..4").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("3, 1").unwrap(), vec![3, 1]);
        assert!(parse_seeds("4..0").is_err());
        assert!(parse_seeds("1,1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["saf-lab", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["saf-lab"]), EXIT_USAGE);
        assert_eq!(run(["saf-lab", "gen-data", "--kind", "spirals", "--out", "x"]), EXIT_USAGE);
        assert_eq!(run(["saf-lab", "--print-config"]), EXIT_OK);
    }
}
