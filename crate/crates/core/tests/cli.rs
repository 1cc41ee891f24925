use std::path::Path;

use saf_lab::cli::{
    ablation_variants, data_hash, mean_sd, run, RunManifest, ABLATION_FILE, ABLATION_HEADER, DATA_SPEC_FILE,
    EMBEDDINGS_CSV, EMBEDDINGS_SVG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, MANIFEST_FILE, SOURCE_CSV, TARGET_CSV,
};
use saf_lab::data::{load_csv, Domain};
use saf_lab::train::{TrainConfig, CONFIG_FILE, METRICS_FILE, PARAMS_FILE};

fn saf_lab(args: &[&str]) -> i32 {
    run(std::iter::once("saf-lab").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A config small enough to train in well under a second.
const TINY: &[&str] = &[
    "--set", "run.total_iterations=12",
    "--set", "run.eval_every=6",
    "--set", "run.batch_size=8",
    "--set", "model.feature_hidden=8",
    "--set", "model.feature_dim=6",
    "--set", "model.bottleneck_dim=4",
    "--set", "model.classifier_hidden=4",
    "--set", "model.saf_dim=3",
    "--set", "data.n_samples=40",
];

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn gen_data_writes_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let code = saf_lab(&["gen-data", "--kind", "moons", "--rotation", "35", "--seed", "7", "--out", p(out)]);
        assert_eq!(code, EXIT_OK);
    }
    for f in [SOURCE_CSV, TARGET_CSV, DATA_SPEC_FILE] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let spec = std::fs::read_to_string(a.join(DATA_SPEC_FILE)).unwrap();
    assert!(spec.contains("target.rotation_deg = 35.0"));
    assert_ne!(std::fs::read(a.join(SOURCE_CSV)).unwrap(), std::fs::read(a.join(TARGET_CSV)).unwrap());
}

#[test]
fn zero_shift_gives_identical_domains() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["moons", "blobs"] {
        let out = dir.path().join(kind);
        assert_eq!(saf_lab(&["gen-data", "--kind", kind, "--rotation", "0", "--out", p(&out)]), EXIT_OK);
        let s = load_csv(&out.join(SOURCE_CSV), true, Domain::Source).unwrap();
        let t = load_csv(&out.join(TARGET_CSV), true, Domain::Target).unwrap();
        assert_eq!((s.features, s.labels), (t.features, t.labels));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(saf_lab(&["--help"]), EXIT_OK);
    assert_eq!(saf_lab(&[]), EXIT_USAGE);
    assert_eq!(saf_lab(&["train", "--bogus"]), EXIT_USAGE);
    assert_eq!(saf_lab(&["gen-data", "--samples", "many", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(saf_lab(&["gen-data", "--scale=-1", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(saf_lab(&["gen-data", "--translate", "1", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(saf_lab(&["train", "--seeds", "3..1", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(saf_lab(&["train", "--source", "s.csv", "--out", p(&out)]), EXIT_USAGE);
    // Runtime failures: missing files and rejected configuration values.
    assert_eq!(saf_lab(&["train", "--config", "/nonexistent.cfg", "--out", p(&out)]), EXIT_RUNTIME);
    assert_eq!(saf_lab(&["eval", "--params", "/nonexistent.txt"]), EXIT_RUNTIME);
    assert_eq!(saf_lab(&["train", "--set", "run.no_such_key=1", "--out", p(&out)]), EXIT_RUNTIME);
}

#[test]
fn config_parsing_is_strict_and_names_the_key() {
    let err = TrainConfig::parse("[run]\nbatch_size = 8\nlearning_speed = 3\n").unwrap_err().to_string();
    assert!(err.contains("learning_speed"), "{err}");
    let err = TrainConfig::parse("[gpu]\ncount = 1\n").unwrap_err().to_string();
    assert!(err.contains("gpu"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "[model]\nwidth = 3\n").unwrap();
    let out = dir.path().join("run");
    assert_eq!(saf_lab(&["train", "--config", p(&cfg), "--out", p(&out)]), EXIT_RUNTIME);
    assert!(!out.join(METRICS_FILE).exists());
}

#[test]
fn printed_defaults_parse_back_to_the_defaults() {
    let text = TrainConfig::default().render();
    assert_eq!(TrainConfig::parse(&text).unwrap(), TrainConfig::default());
    assert_eq!(saf_lab(&["--print-config"]), EXIT_OK);
}

#[test]
fn flags_beat_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    let mut base = TrainConfig::default();
    base.saf_enabled = true;
    std::fs::write(&cfg, base.render()).unwrap();
    let out = dir.path().join("run");
    let args = with_tiny(&["train", "--config", p(&cfg), "--saf", "off", "--out", p(&out)]);
    assert_eq!(saf_lab(&args), EXIT_OK);
    let used = TrainConfig::load(&out.join(CONFIG_FILE)).unwrap();
    assert!(!used.saf_enabled);
    assert_eq!(used.total_iterations, 12);
    // With SAF off the mixing loss is never evaluated.
    let metrics = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    for line in metrics.lines().skip(1) {
        assert_eq!(line.split(',').nth(3).unwrap().parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn multi_seed_training_writes_a_recomputable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    assert_eq!(saf_lab(&with_tiny(&["train", "--seeds", "0..4", "--out", p(&out)])), EXIT_OK);
    let m = RunManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    for r in &m.runs {
        assert!(out.join(&r.dir).join(METRICS_FILE).exists());
        assert!(out.join(&r.dir).join(PARAMS_FILE).exists());
    }
    assert_eq!(m.recompute(&out).unwrap(), m);
    let accs: Vec<f64> = m.runs.iter().map(|r| r.tgt_acc).collect();
    let mean = accs.iter().sum::<f64>() / 5.0;
    let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((m.mean_tgt_acc - mean).abs() < 1e-12 && (m.sd_tgt_acc - sd).abs() < 1e-12);
    assert_eq!(mean_sd(&accs), (m.mean_tgt_acc, m.sd_tgt_acc));

    let cfg = TrainConfig::load(&out.join(CONFIG_FILE)).unwrap();
    let (s, t) = saf_lab::train::load_domains(&cfg).unwrap();
    assert_eq!((data_hash(&s), data_hash(&t)), (m.source_sha256.clone(), m.target_sha256.clone()));

    // A second invocation reproduces every file byte for byte.
    let again = dir.path().join("again");
    assert_eq!(saf_lab(&with_tiny(&["train", "--seeds", "0..4", "--out", p(&again)])), EXIT_OK);
    assert_eq!(std::fs::read(out.join(MANIFEST_FILE)).unwrap(), std::fs::read(again.join(MANIFEST_FILE)).unwrap());
    for r in &m.runs {
        for f in [METRICS_FILE, PARAMS_FILE] {
            assert_eq!(std::fs::read(out.join(&r.dir).join(f)).unwrap(), std::fs::read(again.join(&r.dir).join(f)).unwrap());
        }
    }
}

#[test]
fn eval_and_export_use_a_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(saf_lab(&["gen-data", "--samples", "40", "--rotation", "20", "--out", p(&data)]), EXIT_OK);
    let (src, tgt) = (data.join(SOURCE_CSV), data.join(TARGET_CSV));
    let run_dir = dir.path().join("run");
    let train = with_tiny(&["train", "--source", p(&src), "--target", p(&tgt), "--out", p(&run_dir)]);
    assert_eq!(saf_lab(&train), EXIT_OK);

    let params = run_dir.join(PARAMS_FILE);
    let cfg = run_dir.join(CONFIG_FILE);
    let eval_out = dir.path().join("eval.csv");
    let code = saf_lab(&["eval", "--config", p(&cfg), "--params", p(&params), "--out", p(&eval_out)]);
    assert_eq!(code, EXIT_OK);
    let eval = std::fs::read_to_string(&eval_out).unwrap();
    let last_train = std::fs::read_to_string(run_dir.join(METRICS_FILE)).unwrap();
    // Re-evaluating the saved model reproduces the final metrics row.
    assert_eq!(eval.lines().nth(1), last_train.lines().last());

    let emb = dir.path().join("emb");
    let code = saf_lab(&["export-embeddings", "--config", p(&cfg), "--params", p(&params), "--out", p(&emb)]);
    assert_eq!(code, EXIT_OK);
    let csv = std::fs::read_to_string(emb.join(EMBEDDINGS_CSV)).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y,domain,label"));
    assert_eq!(csv.lines().count(), 81);
    let (mut sx, mut sy) = (0.0, 0.0);
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        sx += f[0].parse::<f64>().unwrap();
        sy += f[1].parse::<f64>().unwrap();
    }
    assert!(sx.abs() / 80.0 < 1e-10 && sy.abs() / 80.0 < 1e-10);
    assert!(std::fs::read_to_string(emb.join(EMBEDDINGS_SVG)).unwrap().starts_with("<svg"));
}

#[test]
fn ablation_grid_is_a_controlled_comparison() {
    let base = TrainConfig::default();
    let variants = ablation_variants(&base);
    let names: Vec<&str> = variants.iter().map(|v| v.0).collect();
    assert_eq!(
        names,
        [
            "backbone-only", "no-bottleneck", "beta-eta", "constant-eta", "k1", "k4",
            "include-source", "only-uncertain", "only-certain", "full-saf"
        ]
    );
    assert_eq!(variants[9].1, base);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ablate");
    assert_eq!(saf_lab(&with_tiny(&["ablate", "--seeds", "0,1", "--out", p(&out)])), EXIT_OK);
    let table = std::fs::read_to_string(out.join(ABLATION_FILE)).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], ABLATION_HEADER);
    assert_eq!(lines.len(), 11);
    let mut hashes = Vec::new();
    for (name, _) in &variants {
        let m = RunManifest::load(&out.join(name).join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1]);
        hashes.push((m.source_sha256, m.target_sha256));
        assert!(lines.iter().any(|l| l.starts_with(&format!("{name},")) && l.ends_with(",ok")));
    }
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn thread_cap_does_not_change_results() {
    let base: TrainConfig = {
        let mut c = TrainConfig::default();
        for pair in TINY.chunks(2) {
            let (k, v) = pair[1].split_once('=').unwrap();
            c.set(k, v).unwrap();
        }
        c
    };
    let (s, t) = saf_lab::train::load_domains(&base).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let one = saf_lab::cli::train_seeds_on(&base, &[0, 1, 2], &dir.path().join("1"), &s, &t, 1).unwrap().0;
    let three = saf_lab::cli::train_seeds_on(&base, &[0, 1, 2], &dir.path().join("3"), &s, &t, 3).unwrap().0;
    assert_eq!(one, three);
}
