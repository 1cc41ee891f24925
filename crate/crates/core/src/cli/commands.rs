//! The work behind each subcommand, callable without the argument parser.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::manifest::{RunManifest, SeedResult, MANIFEST_FILE};
use super::pca::pca_2d;
use super::pool::{run_all, worker_count};
use super::svg::{scatter_svg, Point};
use crate::autodiff::{Tape, Tensor};
use crate::data::{self, Batch, Domain, DomainSpec, Generator};
use crate::error::{Error, Result};
use crate::mixup::{EntropyFilter, MixMode};
use crate::nn::{load_params, ModelBundle};
use crate::train::{evaluate, load_domains, run_experiment_on, stream, MetricsRecord, TrainConfig, CONFIG_FILE, METRICS_HEADER};

pub const SOURCE_CSV: &str = "source.csv";
pub const TARGET_CSV: &str = "target.csv";
pub const DATA_SPEC_FILE: &str = "spec.txt";

/// Writes both domains of a synthetic shift. The domains share the seed,
/// so the target differs from the source only by its affine map.
pub fn gen_data(source: &DomainSpec, target: &DomainSpec, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let s = data::generate(source, Domain::Source)?;
    let t = data::generate(target, Domain::Target)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (sp, tp) = (out.join(SOURCE_CSV), out.join(TARGET_CSV));
    data::save_csv(&s, &sp)?;
    data::save_csv(&t, &tp)?;
    let mut spec = String::from("# saf-lab data spec v1\n");
    for (name, d) in [("source", source), ("target", target)] {
        let _ = writeln!(spec, "{name}.generator = {}", d.generator);
        let _ = writeln!(spec, "{name}.n_samples = {}", d.n_samples);
        let _ = writeln!(spec, "{name}.noise_sd = {:?}", d.noise_sd);
        let _ = writeln!(spec, "{name}.rotation_deg = {:?}", d.rotation_deg);
        let _ = writeln!(spec, "{name}.translation = {:?}, {:?}", d.translation[0], d.translation[1]);
        let _ = writeln!(spec, "{name}.scale = {:?}", d.scale);
        let _ = writeln!(spec, "{name}.seed = {}", d.seed);
    }
    let spec_path = out.join(DATA_SPEC_FILE);
    std::fs::write(&spec_path, spec).map_err(|e| Error::io(&spec_path, e))?;
    Ok((sp, tp))
}

/// Default blob/moons spec pair for `gen-data` flags.
pub fn domain_pair(
    generator: Generator,
    n_samples: usize,
    noise_sd: f64,
    seed: u64,
    rotation_deg: f64,
    translation: [f64; 2],
    scale: f64,
) -> (DomainSpec, DomainSpec) {
    let source = DomainSpec {
        generator,
        n_samples,
        noise_sd,
        rotation_deg: 0.0,
        translation: [0.0, 0.0],
        scale: 1.0,
        seed,
    };
    let target = DomainSpec {
        rotation_deg,
        translation,
        scale,
        ..source.clone()
    };
    (source, target)
}

/// Outcome of one seed in a multi-seed run.
pub type SeedOutcome = (u64, Result<MetricsRecord>);

/// Trains `config` once per seed into `out/seed-<s>` and writes the
/// manifest. Every seed is attempted; the manifest covers the ones that
/// finished.
pub fn train_seeds(config: &TrainConfig, seeds: &[u64], out: &Path) -> Result<(RunManifest, Vec<SeedOutcome>)> {
    config.validate()?;
    let (source, target) = load_domains(config)?;
    train_seeds_on(config, seeds, out, &source, &target, worker_count())
}

pub fn train_seeds_on(
    config: &TrainConfig,
    seeds: &[u64],
    out: &Path,
    source: &Batch,
    target: &Batch,
    workers: usize,
) -> Result<(RunManifest, Vec<SeedOutcome>)> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, config.render()).map_err(|e| Error::io(&cfg_path, e))?;
    let outcomes: Vec<SeedOutcome> = run_all(seeds, workers, |&seed| {
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let dir = out.join(format!("seed-{seed}"));
        (seed, run_experiment_on(&cfg, source, target, &dir).map(|o| o.final_record))
    });
    let runs = outcomes
        .iter()
        .filter_map(|(seed, r)| {
            r.as_ref().ok().map(|rec| SeedResult {
                seed: *seed,
                dir: PathBuf::from(format!("seed-{seed}")),
                tgt_acc: rec.tgt_acc,
            })
        })
        .collect();
    let manifest = RunManifest::new(PathBuf::from(CONFIG_FILE), source, target, runs);
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok((manifest, outcomes))
}

/// The ablation grid: each variant is the base configuration with one
/// change. `full-saf` is the base with SAF switched on.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let full = TrainConfig {
        saf_enabled: true,
        ..base.clone()
    };
    let with = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = full.clone();
        f(&mut c);
        c
    };
    vec![
        ("backbone-only", with(&|c| c.saf_enabled = false)),
        ("no-bottleneck", with(&|c| c.model.saf_after_bottleneck = true)),
        ("beta-eta", with(&|c| c.mixup.mode = MixMode::Beta)),
        ("constant-eta", with(&|c| c.mixup.mode = MixMode::Constant)),
        ("k1", with(&|c| c.model.saf_bottlenecks = 1)),
        ("k4", with(&|c| c.model.saf_bottlenecks = 4)),
        ("include-source", with(&|c| c.mixup.include_source = true)),
        ("only-uncertain", with(&|c| c.mixup.entropy_filter = EntropyFilter::OnlyUncertain)),
        ("only-certain", with(&|c| c.mixup.entropy_filter = EntropyFilter::OnlyCertain)),
        ("full-saf", full.clone()),
    ]
}

pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_HEADER: &str = "variant,mean_tgt_acc,sd_tgt_acc,status";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub mean_tgt_acc: f64,
    pub sd_tgt_acc: f64,
    /// `ok`, or the first failure.
    pub status: String,
}

impl AblationRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.variant,
            self.mean_tgt_acc,
            self.sd_tgt_acc,
            self.status.replace([',', '\n'], ";")
        )
    }
}

/// Runs every variant over the same seeds on one shared copy of the data,
/// written once to `out/data`. A failing variant is reported in its row
/// while the others proceed.
pub fn ablate(base: &TrainConfig, seeds: &[u64], out: &Path) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let (source, target) = load_domains(base)?;
    let data_dir = out.join("data");
    std::fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
    let (sp, tp) = (data_dir.join(SOURCE_CSV), data_dir.join(TARGET_CSV));
    data::save_csv(&source, &sp)?;
    data::save_csv(&target, &tp)?;
    let mut shared = base.clone();
    shared.data.source_csv = Some(sp);
    shared.data.target_csv = Some(tp);
    let variants = ablation_variants(&shared);

    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results = run_all(&jobs, worker_count(), |&(v, seed)| {
        let (name, cfg) = &variants[v];
        let cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let dir = out.join(name).join(format!("seed-{seed}"));
        cfg.validate()
            .and_then(|_| run_experiment_on(&cfg, &source, &target, &dir))
            .map(|o| o.final_record.tgt_acc)
    });

    let mut rows = Vec::with_capacity(variants.len());
    for (v, (name, cfg)) in variants.iter().enumerate() {
        let vdir = out.join(name);
        let mut runs = Vec::new();
        let mut status = String::from("ok");
        for ((jv, seed), r) in jobs.iter().zip(&results) {
            if *jv != v {
                continue;
            }
            match r {
                Ok(acc) => runs.push(SeedResult {
                    seed: *seed,
                    dir: PathBuf::from(format!("seed-{seed}")),
                    tgt_acc: *acc,
                }),
                Err(e) if status == "ok" => status = format!("error: {e}"),
                Err(_) => {}
            }
        }
        std::fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
        let cfg_path = vdir.join(CONFIG_FILE);
        std::fs::write(&cfg_path, cfg.render()).map_err(|e| Error::io(&cfg_path, e))?;
        let manifest = RunManifest::new(PathBuf::from(CONFIG_FILE), &source, &target, runs);
        manifest.save(&vdir.join(MANIFEST_FILE))?;
        let (mean, sd) = if status == "ok" {
            (manifest.mean_tgt_acc, manifest.sd_tgt_acc)
        } else {
            (f64::NAN, f64::NAN)
        };
        rows.push(AblationRow {
            variant: name.to_string(),
            mean_tgt_acc: mean,
            sd_tgt_acc: sd,
            status,
        });
    }
    let mut table = format!("{ABLATION_HEADER}\n");
    for r in &rows {
        table.push_str(&r.csv_row());
        table.push('\n');
    }
    let table_path = out.join(ABLATION_FILE);
    std::fs::write(&table_path, table).map_err(|e| Error::io(&table_path, e))?;
    Ok(rows)
}

/// Builds the configured bundle and loads trained parameters into it.
pub fn load_bundle(config: &TrainConfig, params: &Path) -> Result<ModelBundle> {
    let mut init = stream(config.seed, 0);
    let mut bundle = ModelBundle::build(config.backbone, &config.model, &mut init)?;
    load_params(&mut bundle, params)?;
    Ok(bundle)
}

/// Metrics CSV (header plus one row) of a trained model on the configured domains.
pub fn eval_params(config: &TrainConfig, params: &Path) -> Result<String> {
    config.validate()?;
    let (source, target) = load_domains(config)?;
    let mut bundle = load_bundle(config, params)?;
    let rec = evaluate(&mut bundle, &source, &target, config, config.total_iterations)?;
    Ok(format!("{METRICS_HEADER}\n{}\n", rec.csv_row()))
}

pub const EMBEDDINGS_CSV: &str = "embeddings.csv";
pub const EMBEDDINGS_SVG: &str = "embeddings.svg";

/// Eval-mode bottleneck outputs of both domains, stacked source first.
pub fn bottleneck_embeddings(bundle: &mut ModelBundle, source: &Batch, target: &Batch) -> Result<Tensor> {
    let mut rng = stream(0, 0);
    let mut out = Vec::new();
    for b in [source, target] {
        let mut tape = Tape::new();
        let x = tape.constant(b.features.clone());
        let phi = bundle.forward_features(&mut tape, x, false, &mut rng)?;
        let z = bundle.bottleneck(&mut tape, phi, false, &mut rng)?;
        out.push(tape.value(z).clone());
    }
    Tensor::vstack(&[&out[0], &out[1]])
}

/// Projects labelled rows onto their top two principal directions and
/// writes `x,y,domain,label` CSV plus a scatter SVG into `out`.
pub fn write_embeddings(features: &Tensor, domains: &[Domain], labels: &[usize], out: &Path) -> Result<()> {
    if domains.len() != features.rows() || labels.len() != features.rows() {
        return Err(Error::Shape("one domain and one label per row are required".into()));
    }
    let pca = pca_2d(features)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut csv = String::from("x,y,domain,label\n");
    let mut points = Vec::with_capacity(features.rows());
    for r in 0..features.rows() {
        let (x, y) = (pca.projected.get(r, 0), pca.projected.get(r, 1));
        let _ = writeln!(csv, "{x:?},{y:?},{},{}", domains[r] as u8, labels[r]);
        points.push(Point {
            x,
            y,
            domain: domains[r],
            label: labels[r],
        });
    }
    let csv_path = out.join(EMBEDDINGS_CSV);
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let svg_path = out.join(EMBEDDINGS_SVG);
    std::fs::write(&svg_path, scatter_svg(&points, "bottleneck features, first two principal components"))
        .map_err(|e| Error::io(&svg_path, e))
}

pub fn export_embeddings(config: &TrainConfig, params: &Path, out: &Path) -> Result<()> {
    config.validate()?;
    let (source, target) = load_domains(config)?;
    let mut bundle = load_bundle(config, params)?;
    let z = bottleneck_embeddings(&mut bundle, &source, &target)?;
    let domains: Vec<Domain> = source.domain_tags.iter().chain(&target.domain_tags).copied().collect();
    let labels: Vec<usize> = source
        .labels_or_err("embedding export")?
        .iter()
        .chain(target.labels_or_err("embedding export")?)
        .copied()
        .collect();
    write_embeddings(&z, &domains, &labels, out)
}
