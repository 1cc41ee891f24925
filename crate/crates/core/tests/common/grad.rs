//! Central finite-difference oracle for tape operations and for whole
//! bundles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use saf_lab::autodiff::{RunningStats, Tape, Tensor, Var};
use saf_lab::losses::{
    cross_entropy, cross_entropy_divergence, dann_domain_loss, mdd_adversarial_loss, MarginParams,
};
use saf_lab::mixup::{pseudo_label_probs, saf_mixup_with_labels, MixupPolicy};
use saf_lab::nn::{Backbone, ModelBundle, ModelDims};
use saf_lab::train::{StepRngs, TrainConfig};
use saf_lab::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 100;

/// Gradients smaller than this are compared absolutely (to 1e-8), which
/// keeps central-difference roundoff on structurally zero gradients, such
/// as a bias feeding batch norm, from reading as a relative error.
const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

type Build = dyn Fn(&mut Tape, &[Var], &mut ChaCha8Rng) -> Result<Var>;

/// One differentiable operation under test. `build` may draw structural
/// choices (labels, indices, masks) from the generator it is handed; the
/// generator is reseeded for every evaluation so those stay fixed.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<(usize, usize)>,
    /// Expected ratio of the tape gradient to the finite difference.
    pub factor: f64,
    pub build: Box<Build>,
}

impl OpCase {
    fn new(
        name: &'static str,
        shapes: &[(usize, usize)],
        build: impl Fn(&mut Tape, &[Var], &mut ChaCha8Rng) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name,
            shapes: shapes.to_vec(),
            factor: 1.0,
            build: Box::new(build),
        }
    }

    fn scaled(mut self, factor: f64) -> Self {
        self.factor = factor;
        self
    }

    /// `Σ out ⊙ weights`, so every output coordinate matters.
    fn value(&self, inputs: &[Tensor], weights: &Tensor, seed: u64) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = (self.build)(&mut tape, &vars, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        tape.value(out)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Largest relative error over all input coordinates of one instance.
    pub fn check_instance(&self, rng: &mut ChaCha8Rng) -> f64 {
        let inputs: Vec<Tensor> = self.shapes.iter().map(|&(r, c)| normal(rng, r, c)).collect();
        let seed: u64 = rng.random();

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = (self.build)(&mut tape, &vars, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (r, c) = tape.shape(out);
        let weights = normal(rng, r, c);
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();

        let mut worst: f64 = 0.0;
        for (i, v) in vars.iter().enumerate() {
            let grad = tape
                .grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(inputs[i].rows(), inputs[i].cols()));
            for j in 0..inputs[i].len() {
                let mut plus = inputs.clone();
                plus[i].data_mut()[j] += FD_STEP;
                let mut minus = inputs.clone();
                minus[i].data_mut()[j] -= FD_STEP;
                let numeric = (self.value(&plus, &weights, seed) - self.value(&minus, &weights, seed))
                    / (2.0 * FD_STEP);
                worst = worst.max(rel_err(grad.data()[j], self.factor * numeric));
            }
        }
        worst
    }
}

fn labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

fn margin() -> MarginParams {
    MarginParams::from_gamma(4.0).unwrap()
}

/// Every differentiable tape operation and loss.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase::new("matmul", &[(3, 4), (4, 2)], |t, v, _| t.matmul(v[0], v[1])),
        OpCase::new("add_bias", &[(4, 3), (1, 3)], |t, v, _| t.add_bias(v[0], v[1])),
        OpCase::new("add", &[(3, 4), (3, 4)], |t, v, _| t.add(v[0], v[1])),
        OpCase::new("sub", &[(3, 4), (3, 4)], |t, v, _| t.sub(v[0], v[1])),
        OpCase::new("mul", &[(3, 4), (3, 4)], |t, v, _| t.mul(v[0], v[1])),
        OpCase::new("mul_col", &[(4, 3), (4, 1)], |t, v, _| t.mul_col(v[0], v[1])),
        OpCase::new("scale", &[(3, 4)], |t, v, r| {
            let k = r.random_range(-2.0..2.0);
            Ok(t.scale(v[0], k))
        }),
        OpCase::new("add_scalar", &[(3, 4)], |t, v, r| {
            let k = r.random_range(-2.0..2.0);
            Ok(t.add_scalar(v[0], k))
        }),
        OpCase::new("one_minus", &[(3, 4)], |t, v, _| Ok(t.one_minus(v[0]))),
        OpCase::new("relu", &[(3, 4)], |t, v, _| Ok(t.relu(v[0]))),
        OpCase::new("sigmoid", &[(3, 4)], |t, v, _| Ok(t.sigmoid(v[0]))),
        OpCase::new("clamp", &[(3, 4)], |t, v, _| Ok(t.clamp(v[0], -0.5, 0.8))),
        OpCase::new("softmax_rows", &[(3, 4)], |t, v, _| t.softmax_rows(v[0])),
        OpCase::new("log_softmax_rows", &[(3, 4)], |t, v, _| t.log_softmax_rows(v[0])),
        OpCase::new("log_complement_softmax", &[(5, 3)], |t, v, r| {
            let y = labels(r, 5, 3);
            t.log_complement_softmax(v[0], &y)
        }),
        OpCase::new("dropout", &[(4, 5)], |t, v, r| t.dropout(v[0], 0.5, true, r)),
        OpCase::new("batch_norm_train", &[(6, 3), (1, 3), (1, 3)], |t, v, _| {
            let mut stats = RunningStats::new(3);
            t.batch_norm(v[0], v[1], v[2], &mut stats, true)
        }),
        OpCase::new("batch_norm_anchored", &[(7, 3), (1, 3), (1, 3)], |t, v, _| {
            let mut stats = RunningStats::new(3);
            t.batch_norm_anchored(v[0], v[1], v[2], &mut stats, true, 4)
        }),
        OpCase::new("batch_norm_eval", &[(4, 3), (1, 3), (1, 3)], |t, v, r| {
            let mut stats = RunningStats {
                mean: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
                var: (0..3).map(|_| r.random_range(0.5..2.0)).collect(),
            };
            t.batch_norm(v[0], v[1], v[2], &mut stats, false)
        }),
        OpCase::new("grad_reverse(0.1)", &[(3, 4)], |t, v, _| Ok(t.grad_reverse(v[0], 0.1))).scaled(-0.1),
        OpCase::new("grad_reverse(1)", &[(3, 4)], |t, v, _| Ok(t.grad_reverse(v[0], 1.0))).scaled(-1.0),
        OpCase::new("sum", &[(3, 4)], |t, v, _| Ok(t.sum(v[0]))),
        OpCase::new("mean", &[(3, 4)], |t, v, _| t.mean(v[0])),
        OpCase::new("sum_rows", &[(3, 4)], |t, v, _| Ok(t.sum_rows(v[0]))),
        OpCase::new("gather_rows", &[(4, 3)], |t, v, r| {
            let idx: Vec<usize> = (0..6).map(|_| r.random_range(0..4)).collect();
            t.gather_rows(v[0], &idx)
        }),
        OpCase::new("concat_rows", &[(2, 3), (3, 3)], |t, v, _| t.concat_rows(&[v[0], v[1]])),
        OpCase::new("cross_entropy", &[(5, 3)], |t, v, r| {
            let y = labels(r, 5, 3);
            cross_entropy(t, v[0], &y)
        }),
        OpCase::new("cross_entropy_divergence", &[(4, 3), (4, 3)], |t, v, _| {
            let soft = t.softmax_rows(v[1])?;
            cross_entropy_divergence(t, v[0], soft)
        }),
        OpCase::new("dann_domain_loss", &[(3, 2), (4, 2)], |t, v, _| dann_domain_loss(t, v[0], v[1])),
        OpCase::new("mdd_adversarial_loss", &[(3, 3), (3, 3), (4, 3), (4, 3)], |t, v, _| {
            mdd_adversarial_loss(t, v[0], v[1], v[2], v[3], margin())
        }),
    ]
}

/// Worst relative error of `case` over `instances` random instances.
pub fn check_op(case: &OpCase, instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| case.check_instance(&mut rng))
        .fold(0.0, f64::max)
}

/// Scalar parts of a bundle-level objective and the tape total they form.
pub struct Parts {
    pub total: Var,
    pub parts: Vec<Var>,
}

/// Compares the tape gradient of every parameter coordinate with
/// `Σ_k coef(name, k) · ∂part_k/∂θ` by central differences.
pub fn check_bundle(
    bundle: &ModelBundle,
    graph: &dyn Fn(&mut ModelBundle, &mut Tape) -> Result<Parts>,
    coef: &dyn Fn(&str, usize) -> f64,
) -> f64 {
    let mut b = bundle.clone();
    let mut tape = Tape::new();
    let out = graph(&mut b, &mut tape).unwrap();
    tape.backward(out.total).unwrap();
    b.pull_grads(&tape);
    let analytic: Vec<(String, Tensor)> = b
        .params()
        .iter()
        .map(|p| (p.name().to_string(), p.grad().unwrap().clone()))
        .collect();

    let parts_at = |perturbed: &ModelBundle| -> Vec<f64> {
        let mut b = perturbed.clone();
        let mut tape = Tape::new();
        let out = graph(&mut b, &mut tape).unwrap();
        out.parts.iter().map(|v| tape.value(*v).item().unwrap()).collect()
    };

    let mut worst: f64 = 0.0;
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let mut plus = bundle.clone();
            plus.params_mut()[pi].value_mut().data_mut()[j] += FD_STEP;
            let mut minus = bundle.clone();
            minus.params_mut()[pi].value_mut().data_mut()[j] -= FD_STEP;
            let (fp, fm) = (parts_at(&plus), parts_at(&minus));
            let numeric: f64 = fp
                .iter()
                .zip(&fm)
                .enumerate()
                .map(|(k, (a, b))| coef(name, k) * (a - b) / (2.0 * FD_STEP))
                .sum();
            worst = worst.max(rel_err(grad.data()[j], numeric));
        }
    }
    worst
}

/// Small dimensions so that every parameter can be perturbed.
pub fn tiny_dims(dropout: f64) -> ModelDims {
    ModelDims {
        input_dim: 2,
        feature_hidden: vec![4],
        feature_dim: 3,
        bottleneck_dim: 3,
        classifier_hidden: 3,
        num_classes: 2,
        saf_dim: 2,
        saf_bottlenecks: 2,
        bottleneck_dropout: dropout,
        classifier_dropout: dropout,
        saf_after_bottleneck: false,
    }
}

/// Inputs of one composed-graph instance.
pub struct GraphInstance {
    pub bundle: ModelBundle,
    pub src: Tensor,
    pub src_labels: Vec<usize>,
    pub tgt: Tensor,
    pub config: TrainConfig,
    pub lambda_d: f64,
    pub lambda_m: f64,
    pub rngs: StepRngs,
}

impl GraphInstance {
    pub fn random(backbone: Backbone, rng: &mut ChaCha8Rng) -> Self {
        let dims = tiny_dims(0.3);
        let mut bundle = ModelBundle::build(backbone, &dims, rng).unwrap();
        // Zero biases put ReLU inputs exactly on the kink whenever a whole
        // input row is zero (dead units, dropped rows).
        for p in bundle.params_mut() {
            if p.name().ends_with("bias") || p.name().ends_with("beta") {
                let (r, c) = p.value().shape();
                *p.value_mut() = normal(rng, r, c);
            }
        }
        let (ns, nt) = (4, 5);
        let config = TrainConfig {
            backbone,
            model: dims,
            mixup: MixupPolicy::default(),
            ..TrainConfig::default()
        };
        Self {
            bundle,
            src: normal(rng, ns, 2),
            src_labels: labels(rng, ns, 2),
            tgt: normal(rng, nt, 2),
            config,
            lambda_d: rng.random_range(0.01..1.0),
            lambda_m: rng.random_range(0.01..1.0),
            rngs: StepRngs::new(rng.random()),
        }
    }

    /// Eval-mode pseudo-labels of the target rows at the current
    /// parameters; frozen for the finite-difference oracle.
    pub fn pseudo_labels(&self) -> Tensor {
        let mut b = self.bundle.clone();
        let mut tape = Tape::new();
        let x = tape.constant(self.tgt.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let phi = b.forward_features(&mut tape, x, true, &mut rng).unwrap();
        pseudo_label_probs(&mut b, tape.value(phi), &mut rng).unwrap()
    }

    /// The joint training objective assembled from public operations:
    /// one pass of source, target and mixed target rows through B (with
    /// statistics from the real rows) and C,
    /// the adversary behind gradient reversal, and the mixed-label loss.
    /// Returns the total and `[ε_C, ε_D, ε_M]`.
    pub fn composed(&self, bundle: &mut ModelBundle, tape: &mut Tape, probs: &Tensor) -> Result<Parts> {
        let mut rngs = self.rngs.clone();
        let (ns, nt) = (self.src.rows(), self.tgt.rows());
        let x = tape.constant(Tensor::vstack(&[&self.src, &self.tgt])?);
        let phi = bundle.forward_features(tape, x, true, &mut rngs.model)?;
        let src_rows: Vec<usize> = (0..ns).collect();
        let tgt_rows: Vec<usize> = (ns..ns + nt).collect();
        let tgt_f = tape.gather_rows(phi, &tgt_rows)?;
        let mixed = saf_mixup_with_labels(bundle, tape, tgt_f, probs, None, &self.config.mixup, &mut rngs.mixup)?;
        let mixed_f = mixed.features.expect("non-empty mix");
        let b_in = tape.concat_rows(&[phi, mixed_f])?;
        let b_all = bundle.bottleneck_anchored(tape, b_in, ns + nt, true, &mut rngs.model)?;
        let logits_all = bundle.classifier_head(tape, b_all, true, &mut rngs.model)?;
        let real: Vec<usize> = (0..ns + nt).collect();
        let b = tape.gather_rows(b_all, &real)?;
        let logits = tape.gather_rows(logits_all, &real)?;
        let c_src = tape.gather_rows(logits, &src_rows)?;
        let eps_c = cross_entropy(tape, c_src, &self.src_labels)?;
        let d = bundle.adversary_head(tape, b, self.lambda_d, true, &mut rngs.adversary)?;
        let d_src = tape.gather_rows(d, &src_rows)?;
        let d_tgt = tape.gather_rows(d, &tgt_rows)?;
        let eps_d = match bundle.backbone {
            Backbone::Dann => dann_domain_loss(tape, d_src, d_tgt)?,
            Backbone::Mdd => {
                let c_tgt = tape.gather_rows(logits, &tgt_rows)?;
                mdd_adversarial_loss(tape, c_src, d_src, c_tgt, d_tgt, margin())?
            }
        };
        let mixed_rows: Vec<usize> = (ns + nt..ns + nt + mixed.len()).collect();
        let c_mix = tape.gather_rows(logits_all, &mixed_rows)?;
        let eps_m = cross_entropy_divergence(tape, c_mix, mixed.soft_labels.expect("labels"))?;
        let weighted = tape.scale(eps_m, self.lambda_m);
        let partial = tape.add(eps_c, eps_d)?;
        let total = tape.add(partial, weighted)?;
        Ok(Parts {
            total,
            parts: vec![eps_c, eps_d, eps_m],
        })
    }

    /// Worst relative error of the composed graph. Parameters upstream of
    /// the reversal see `−λ_D·∂ε_D`; the adversary sees `+∂ε_D`.
    pub fn check(&self) -> f64 {
        let probs = self.pseudo_labels();
        let (lambda_d, lambda_m) = (self.lambda_d, self.lambda_m);
        check_bundle(
            &self.bundle,
            &|b, t| self.composed(b, t, &probs),
            &|name, k| match k {
                0 => 1.0,
                1 if name.starts_with("D.") => 1.0,
                1 => -lambda_d,
                _ => lambda_m,
            },
        )
    }
}
