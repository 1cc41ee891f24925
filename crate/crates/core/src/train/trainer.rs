use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;

use super::config::TrainConfig;
use super::schedule::{lambda_d_schedule, lambda_m_schedule};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{self, Batch, CyclingSampler, Domain};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, cross_entropy_divergence, dann_domain_loss, mdd_adversarial_loss};
use crate::metrics::{
    accuracy, conditional_entropy, empirical_margin_disparity, empirical_mdd_estimate,
    stump_h_divergence,
};
use crate::mixup::{pseudo_label_probs, saf_mixup_with_labels, saf_supervision_loss, MixedBatch, SourcePool};
use crate::nn::{save_params, Backbone, ModelBundle};
use crate::LabRng;

pub const METRICS_HEADER: &str =
    "iter,eps_c,eps_d,eps_m,lambda_d,lambda_m,src_acc,tgt_acc,tgt_entropy,mdd_est,h_div";

/// One evaluation row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iter: usize,
    pub eps_c: f64,
    pub eps_d: f64,
    pub eps_m: f64,
    pub lambda_d: f64,
    pub lambda_m: f64,
    pub src_acc: f64,
    pub tgt_acc: f64,
    pub tgt_entropy: f64,
    /// NaN for the DANN backbone, whose adversary is not a class predictor.
    pub mdd_est: f64,
    pub h_div: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let mut s = self.iter.to_string();
        for v in [
            self.eps_c,
            self.eps_d,
            self.eps_m,
            self.lambda_d,
            self.lambda_m,
            self.src_acc,
            self.tgt_acc,
            self.tgt_entropy,
            self.mdd_est,
            self.h_div,
        ] {
            let _ = write!(s, ",{v}");
        }
        s
    }

    /// Parses one row written by [`MetricsRecord::csv_row`].
    pub fn parse_row(line: &str, row: usize) -> Result<Self> {
        let cells: Vec<&str> = line.trim().split(',').collect();
        if cells.len() != 11 {
            return Err(Error::Parse {
                row,
                msg: format!("expected 11 cells, found {}", cells.len()),
            });
        }
        let bad = |c: &str| Error::Parse {
            row,
            msg: format!("`{c}` is not a number"),
        };
        let iter = cells[0].parse().map_err(|_| bad(cells[0]))?;
        let v = cells[1..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| bad(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            iter,
            eps_c: v[0],
            eps_d: v[1],
            eps_m: v[2],
            lambda_d: v[3],
            lambda_m: v[4],
            src_acc: v[5],
            tgt_acc: v[6],
            tgt_entropy: v[7],
            mdd_est: v[8],
            h_div: v[9],
        })
    }
}

/// Parses a whole metrics CSV, header included.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(Error::Parse {
            row: 0,
            msg: "missing metrics header".into(),
        });
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| MetricsRecord::parse_row(l, i + 1))
        .collect()
}

/// Independent random streams of one run, so that enabling one component
/// never perturbs the draws of another.
#[derive(Clone, Debug)]
pub struct StepRngs {
    /// Dropout in F, B and C on the supervised path.
    pub model: LabRng,
    /// Dropout in D.
    pub adversary: LabRng,
    /// Pairing, Beta draws and dropout on the mixed path.
    pub mixup: LabRng,
}

impl StepRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            model: stream(seed, 1),
            adversary: stream(seed, 2),
            mixup: stream(seed, 3),
        }
    }
}

/// Stream `id` of the generator seeded with `seed`.
pub fn stream(seed: u64, id: u64) -> LabRng {
    let mut rng = LabRng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Loss values and weights of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub eps_c: f64,
    pub eps_d: f64,
    pub eps_m: f64,
    pub lambda_d: f64,
    pub lambda_m: f64,
}

fn item(tape: &Tape, v: Var) -> f64 {
    tape.value(v).item().expect("scalar loss")
}

/// SAF-mixup of `target` rows with pseudo-labels from the current model.
/// The source rows join the pool only when the policy includes them.
fn mix_target<R: rand::Rng + ?Sized>(
    bundle: &mut ModelBundle,
    tape: &mut Tape,
    target: Var,
    source: Var,
    source_labels: &[usize],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<MixedBatch> {
    let probs = pseudo_label_probs(bundle, &tape.value(target).clone(), rng)?;
    let pool = SourcePool {
        features: source,
        labels: source_labels,
    };
    saf_mixup_with_labels(bundle, tape, target, &probs, Some(pool), &config.mixup, rng)
}

/// Builds the step's graph and returns the total objective with its parts.
/// Source and target rows share one pass through F and B, so batch-norm
/// statistics cover both domains.
pub fn build_objective(
    bundle: &mut ModelBundle,
    tape: &mut Tape,
    src: &Batch,
    tgt: &Batch,
    config: &TrainConfig,
    lambda_d: f64,
    lambda_m: f64,
    rngs: &mut StepRngs,
) -> Result<(Var, [Var; 3])> {
    let labels = src.labels_or_err("source batch")?;
    let (ns, nt) = (src.len(), tgt.len());
    if ns == 0 || nt == 0 {
        return Err(Error::Data("training needs non-empty source and target batches".into()));
    }
    let x = tape.constant(Tensor::vstack(&[&src.features, &tgt.features])?);
    let phi = bundle.forward_features(tape, x, true, &mut rngs.model)?;
    let src_rows: Vec<usize> = (0..ns).collect();
    let tgt_rows: Vec<usize> = (ns..ns + nt).collect();
    let after_bottleneck = bundle.dims.saf_after_bottleneck;

    // Mixing before B: the mixed rows ride along in the same pass but are
    // normalized with the real rows' statistics, so M reaches the
    // objective only through ε_M.
    let mut mixed = MixedBatch::default();
    let mut b_input = phi;
    if config.saf_enabled && !after_bottleneck {
        let tgt_features = tape.gather_rows(phi, &tgt_rows)?;
        let src_features = tape.gather_rows(phi, &src_rows)?;
        mixed = mix_target(bundle, tape, tgt_features, src_features, labels, config, &mut rngs.mixup)?;
        if let Some(f) = mixed.features {
            b_input = tape.concat_rows(&[phi, f])?;
        }
    }
    let b_all = bundle.bottleneck_anchored(tape, b_input, ns + nt, true, &mut rngs.model)?;
    let logits_all = bundle.classifier_head(tape, b_all, true, &mut rngs.model)?;
    let real_rows: Vec<usize> = (0..ns + nt).collect();
    let (b, logits) = if b_input == phi {
        (b_all, logits_all)
    } else {
        (tape.gather_rows(b_all, &real_rows)?, tape.gather_rows(logits_all, &real_rows)?)
    };
    let c_src = tape.gather_rows(logits, &src_rows)?;
    let eps_c = cross_entropy(tape, c_src, labels)?;

    let d = bundle.adversary_head(tape, b, lambda_d, true, &mut rngs.adversary)?;
    let d_src = tape.gather_rows(d, &src_rows)?;
    let d_tgt = tape.gather_rows(d, &tgt_rows)?;
    let eps_d = match bundle.backbone {
        Backbone::Dann => dann_domain_loss(tape, d_src, d_tgt)?,
        Backbone::Mdd => {
            let c_tgt = tape.gather_rows(logits, &tgt_rows)?;
            mdd_adversarial_loss(tape, c_src, d_src, c_tgt, d_tgt, config.margin_params()?)?
        }
    };

    let eps_m = if !config.saf_enabled {
        tape.constant(Tensor::scalar(0.0))
    } else if after_bottleneck {
        let tgt_features = tape.gather_rows(b, &tgt_rows)?;
        let src_features = tape.gather_rows(b, &src_rows)?;
        let mixed = mix_target(bundle, tape, tgt_features, src_features, labels, config, &mut rngs.mixup)?;
        saf_supervision_loss(bundle, tape, &mixed, true, &mut rngs.mixup)?
    } else if let Some(labels) = mixed.soft_labels {
        let rows: Vec<usize> = (ns + nt..ns + nt + mixed.len()).collect();
        let c_mix = tape.gather_rows(logits_all, &rows)?;
        cross_entropy_divergence(tape, c_mix, labels)?
    } else {
        tape.constant(Tensor::scalar(0.0))
    };

    let weighted = tape.scale(eps_m, lambda_m);
    let partial = tape.add(eps_c, eps_d)?;
    let total = tape.add(partial, weighted)?;
    Ok((total, [eps_c, eps_d, eps_m]))
}

/// One joint update of every block: a single backward pass over
/// `ε_C + ε_D + λ_M(t)·ε_M`, where the gradient reversal in front of D
/// turns the adversarial term into a minimax update, then one Nesterov
/// step.
///
/// Target labels are never read.
pub fn train_step(
    bundle: &mut ModelBundle,
    src: &Batch,
    tgt: &Batch,
    config: &TrainConfig,
    t: usize,
    rngs: &mut StepRngs,
) -> Result<StepLosses> {
    let lambda_d = lambda_d_schedule(t, config.total_iterations, config.lambda_d_max);
    let lambda_m = lambda_m_schedule(t, config.total_iterations, config.lambda_m_max);
    let mut tape = Tape::new();
    let (total, [c, d, m]) =
        build_objective(bundle, &mut tape, src, tgt, config, lambda_d, lambda_m, rngs)?;
    tape.backward(total)?;
    bundle.pull_grads(&tape);
    bundle.step(config.base_lr, config.momentum)?;
    Ok(StepLosses {
        eps_c: item(&tape, c),
        eps_d: item(&tape, d),
        eps_m: item(&tape, m),
        lambda_d,
        lambda_m,
    })
}

/// Eval-mode outputs of one domain.
struct Forward {
    bottleneck: Var,
    logits: Var,
}

fn forward_eval(bundle: &mut ModelBundle, tape: &mut Tape, x: &Tensor, rng: &mut LabRng) -> Result<Forward> {
    let x = tape.constant(x.clone());
    let phi = bundle.forward_features(tape, x, false, rng)?;
    let bottleneck = bundle.bottleneck(tape, phi, false, rng)?;
    let logits = bundle.classifier_head(tape, bottleneck, false, rng)?;
    Ok(Forward { bottleneck, logits })
}

/// Eval-mode diagnostics at iteration `t`. Both batches must be labelled;
/// this is the only place target labels are consulted.
pub fn evaluate(
    bundle: &mut ModelBundle,
    src_eval: &Batch,
    tgt_eval: &Batch,
    config: &TrainConfig,
    t: usize,
) -> Result<MetricsRecord> {
    let ys = src_eval.labels_or_err("source evaluation")?;
    let yt = tgt_eval.labels_or_err("target evaluation")?;
    let lambda_d = lambda_d_schedule(t, config.total_iterations, config.lambda_d_max);
    let lambda_m = lambda_m_schedule(t, config.total_iterations, config.lambda_m_max);
    // Eval mode draws nothing except the SAF pairing, which uses a
    // dedicated fixed stream so repeated evaluations agree.
    let mut rng = stream(config.seed, 7);
    let mut tape = Tape::new();
    let s = forward_eval(bundle, &mut tape, &src_eval.features, &mut rng)?;
    let g = forward_eval(bundle, &mut tape, &tgt_eval.features, &mut rng)?;

    let eps_c = cross_entropy(&mut tape, s.logits, ys)?;
    let d_src = bundle.adversary_head(&mut tape, s.bottleneck, lambda_d, false, &mut rng)?;
    let d_tgt = bundle.adversary_head(&mut tape, g.bottleneck, lambda_d, false, &mut rng)?;
    let (eps_d, mdd_est) = match bundle.backbone {
        Backbone::Dann => (dann_domain_loss(&mut tape, d_src, d_tgt)?, f64::NAN),
        Backbone::Mdd => {
            let loss = mdd_adversarial_loss(
                &mut tape,
                s.logits,
                d_src,
                g.logits,
                d_tgt,
                config.margin_params()?,
            )?;
            let delta = |c: Var, d: Var| {
                empirical_margin_disparity(
                    &tape.value(c).softmax_rows(),
                    &tape.value(d).softmax_rows(),
                    config.eval_margin,
                )
            };
            let est = empirical_mdd_estimate(delta(s.logits, d_src)?, delta(g.logits, d_tgt)?);
            (loss, est)
        }
    };
    let eps_m = if config.saf_enabled {
        let (target, source) = if bundle.dims.saf_after_bottleneck {
            (g.bottleneck, s.bottleneck)
        } else {
            let xt = tape.constant(tgt_eval.features.clone());
            let xs = tape.constant(src_eval.features.clone());
            (
                bundle.forward_features(&mut tape, xt, false, &mut rng)?,
                bundle.forward_features(&mut tape, xs, false, &mut rng)?,
            )
        };
        let mixed = mix_target(bundle, &mut tape, target, source, ys, config, &mut rng)?;
        let loss = saf_supervision_loss(bundle, &mut tape, &mixed, false, &mut rng)?;
        item(&tape, loss)
    } else {
        0.0
    };

    let tgt_probs = tape.value(g.logits).softmax_rows();
    let entropy = conditional_entropy(&tgt_probs)?;
    Ok(MetricsRecord {
        iter: t,
        eps_c: item(&tape, eps_c),
        eps_d: item(&tape, eps_d),
        eps_m,
        lambda_d,
        lambda_m,
        src_acc: accuracy(tape.value(s.logits), ys)?,
        tgt_acc: accuracy(tape.value(g.logits), yt)?,
        tgt_entropy: entropy.iter().sum::<f64>() / entropy.len() as f64,
        mdd_est,
        h_div: stump_h_divergence(tape.value(s.bottleneck), tape.value(g.bottleneck))?,
    })
}

/// Source and target domains described by `config`, both labelled.
pub fn load_domains(config: &TrainConfig) -> Result<(Batch, Batch)> {
    let d = &config.data;
    let (src, tgt) = match (&d.source_csv, &d.target_csv) {
        (Some(s), Some(t)) => (
            data::load_csv(s, true, Domain::Source)?,
            data::load_csv(t, true, Domain::Target)?,
        ),
        _ => (
            data::generate(&d.domain_spec(&d.source), Domain::Source)?,
            data::generate(&d.domain_spec(&d.target), Domain::Target)?,
        ),
    };
    for b in [&src, &tgt] {
        if b.width() != config.model.input_dim {
            return Err(Error::Config(format!(
                "data has {} features but model.input_dim = {}",
                b.width(),
                config.model.input_dim
            )));
        }
        data::check_label_range(b, config.model.num_classes)?;
    }
    Ok((src, tgt))
}

/// Iterations at which a run evaluates: every `eval_every` steps, plus the
/// last step when it is not already on the grid.
pub fn eval_points(config: &TrainConfig) -> Vec<usize> {
    let (t, k) = (config.total_iterations, config.eval_every.max(1));
    let mut pts: Vec<usize> = (1..=t / k).map(|i| i * k).collect();
    if t % k != 0 {
        pts.push(t);
    }
    pts
}

/// A finished in-memory run.
#[derive(Debug)]
pub struct TrainedRun {
    pub bundle: ModelBundle,
    pub records: Vec<MetricsRecord>,
}

/// Trains for `total_iterations` steps, cycling both domains
/// independently, and evaluates on the full labelled sets. `on_record`
/// sees each evaluation row as soon as it exists.
pub fn train_run(
    config: &TrainConfig,
    source: &Batch,
    target: &Batch,
    mut on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<TrainedRun> {
    config.validate()?;
    let mut init = stream(config.seed, 0);
    let mut bundle = ModelBundle::build(config.backbone, &config.model, &mut init)?;
    let mut rngs = StepRngs::new(config.seed);
    let mut src_stream = CyclingSampler::new(source.clone(), config.batch_size, stream(config.seed, 4))?;
    // The training path gets the target rows only.
    let mut tgt_stream = CyclingSampler::new(target.without_labels(), config.batch_size, stream(config.seed, 5))?;
    let points = eval_points(config);
    let mut next_eval = points.iter().peekable();
    let mut records = Vec::with_capacity(points.len());
    for t in 1..=config.total_iterations {
        let s = src_stream.next_batch();
        let g = tgt_stream.next_batch();
        train_step(&mut bundle, &s, &g, config, t, &mut rngs)?;
        if next_eval.peek() == Some(&&t) {
            next_eval.next();
            let rec = evaluate(&mut bundle, source, target, config, t)?;
            on_record(&rec)?;
            records.push(rec);
        }
    }
    Ok(TrainedRun { bundle, records })
}

pub const CONFIG_FILE: &str = "config.cfg";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PARAMS_FILE: &str = "params.txt";

/// Result of [`run_experiment`].
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub final_record: MetricsRecord,
    pub records: Vec<MetricsRecord>,
}

/// Runs `config` into `dir`: a config snapshot, the metrics CSV (written
/// row by row) and the final parameter file.
pub fn run_experiment(config: &TrainConfig, dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    let (source, target) = load_domains(config)?;
    run_experiment_on(config, &source, &target, dir)
}

/// [`run_experiment`] on already loaded domains.
pub fn run_experiment_on(config: &TrainConfig, source: &Batch, target: &Batch, dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, config.render()).map_err(|e| Error::io(&cfg_path, e))?;
    let metrics_path = dir.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
    let run = train_run(config, source, target, |rec| {
        writeln!(out, "{}", rec.csv_row())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&metrics_path, e))
    })?;
    drop(out);
    save_params(&run.bundle, &dir.join(PARAMS_FILE))?;
    let final_record = run
        .records
        .last()
        .cloned()
        .ok_or_else(|| Error::State("run produced no evaluation".into()))?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        final_record,
        records: run.records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.total_iterations = 10;
        c.eval_every = 5;
        c.data.n_samples = 60;
        c
    }

    #[test]
    fn cadence() {
        let c = tiny();
        assert_eq!(eval_points(&c), vec![5, 10]);
        let mut c = tiny();
        c.eval_every = 4;
        assert_eq!(eval_points(&c), vec![4, 8, 10]);
    }

    #[test]
    fn metrics_row_round_trips() {
        let (s, t) = load_domains(&tiny()).unwrap();
        let run = train_run(&tiny(), &s, &t, |_| Ok(())).unwrap();
        let text = format!(
            "{METRICS_HEADER}\n{}\n",
            run.records.iter().map(MetricsRecord::csv_row).collect::<Vec<_>>().join("\n")
        );
        let parsed = parse_metrics_csv(&text).unwrap();
        assert_eq!(parsed, run.records);
        for r in &run.records {
            assert!((0.0..=1.0).contains(&r.src_acc) && (0.0..=1.0).contains(&r.tgt_acc));
            assert!((-2.0..=2.0).contains(&r.mdd_est));
        }
    }

    #[test]
    fn missing_source_labels_is_a_data_error() {
        let c = tiny();
        let (s, t) = load_domains(&c).unwrap();
        let mut init = stream(0, 0);
        let mut bundle = ModelBundle::build(c.backbone, &c.model, &mut init).unwrap();
        let err = train_step(&mut bundle, &s.without_labels(), &t, &c, 1, &mut StepRngs::new(0));
        assert!(matches!(err, Err(Error::Data(_))));
        let err = evaluate(&mut bundle, &s, &t.without_labels(), &c, 0);
        assert!(matches!(err, Err(Error::Data(_))));
    }
}
