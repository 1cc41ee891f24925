//! SAF-mixup: random pairing of target features, adaptive mixing weights
//! from the SAF module, and mixed pseudo-labels.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_divergence, SoftLabelBatch};
use crate::metrics::conditional_entropy;
use crate::nn::ModelBundle;

/// How the mixing weight η is chosen per pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixMode {
    /// Learned by the SAF module.
    Saf,
    /// Fresh `Beta(α, α)` draw.
    Beta,
    /// Fixed value.
    Constant,
}

/// Which target rows take part in mixing, by prediction entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntropyFilter {
    None,
    /// Rows with `H ≥ threshold`.
    OnlyUncertain,
    /// Rows with `H < threshold`.
    OnlyCertain,
}

macro_rules! tag_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}` (", $($text, " "),+, ")"),
                        other
                    ))),
                }
            }
        }
    };
}

tag_enum!(MixMode { Saf => "saf", Beta => "beta", Constant => "constant" });
tag_enum!(EntropyFilter {
    None => "none",
    OnlyUncertain => "only_uncertain",
    OnlyCertain => "only_certain",
});

#[derive(Clone, Debug, PartialEq)]
pub struct MixupPolicy {
    pub mode: MixMode,
    pub beta_alpha: f64,
    pub constant_eta: f64,
    pub entropy_filter: EntropyFilter,
    /// `None` means half the maximum entropy, `0.5·ln K`.
    pub entropy_threshold: Option<f64>,
    pub include_source: bool,
}

impl Default for MixupPolicy {
    fn default() -> Self {
        Self {
            mode: MixMode::Saf,
            beta_alpha: 0.2,
            constant_eta: 0.6,
            entropy_filter: EntropyFilter::None,
            entropy_threshold: None,
            include_source: false,
        }
    }
}

impl MixupPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.constant_eta > 0.0 && self.constant_eta < 1.0) {
            return Err(Error::Config(format!(
                "constant_eta {} outside (0, 1)",
                self.constant_eta
            )));
        }
        if !(self.beta_alpha > 0.0) {
            return Err(Error::Config(format!("beta_alpha {} must be positive", self.beta_alpha)));
        }
        if let Some(t) = self.entropy_threshold {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("entropy_threshold {t} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn threshold_for(&self, classes: usize) -> f64 {
        self.entropy_threshold
            .unwrap_or_else(|| 0.5 * (classes as f64).ln())
    }
}

/// Mixed features and labels living on a tape. Empty when filtering left
/// nothing to mix.
#[derive(Clone, Debug, Default)]
pub struct MixedBatch {
    pub features: Option<Var>,
    pub soft_labels: Option<Var>,
    pub etas: Vec<f64>,
    /// Pool indices of each pair; source rows, when included, follow the
    /// target rows in the pool.
    pub pair_indices: Vec<(usize, usize)>,
}

impl MixedBatch {
    pub fn is_empty(&self) -> bool {
        self.features.is_none()
    }

    pub fn len(&self) -> usize {
        self.pair_indices.len()
    }

    pub fn soft_label_batch(&self, tape: &Tape) -> Result<Option<SoftLabelBatch>> {
        self.soft_labels
            .map(|v| SoftLabelBatch::new(tape.value(v).clone()))
            .transpose()
    }
}

/// A uniformly random perfect matching of `0..n`; an odd leftover index is
/// paired with itself.
pub fn random_draw_pairs<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if n == 0 {
        return Err(Error::Data("cannot pair an empty pool".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut pairs: Vec<(usize, usize)> = order.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    if n % 2 == 1 {
        let last = order[n - 1];
        pairs.push((last, last));
    }
    Ok(pairs)
}

/// Source rows offered to the mixing pool, with their true labels.
#[derive(Clone, Copy, Debug)]
pub struct SourcePool<'a> {
    pub features: Var,
    pub labels: &'a [usize],
}

/// Mixes `target_features` given precomputed pseudo-label distributions
/// (`target_probs`, treated as constants).
pub fn saf_mixup_with_labels<R: Rng + ?Sized>(
    bundle: &mut ModelBundle,
    tape: &mut Tape,
    target_features: Var,
    target_probs: &Tensor,
    source: Option<SourcePool<'_>>,
    policy: &MixupPolicy,
    rng: &mut R,
) -> Result<MixedBatch> {
    let (n, width) = tape.shape(target_features);
    let classes = bundle.num_classes();
    if n == 0 {
        return Err(Error::Data("no target features to mix".into()));
    }
    if width != bundle.saf.input_width() {
        return Err(Error::Shape(format!(
            "features of width {width} cannot enter a SAF module of width {}",
            bundle.saf.input_width()
        )));
    }
    if target_probs.shape() != (n, classes) {
        return Err(Error::Dimension {
            op: "saf_mixup",
            lhs: (n, classes),
            rhs: target_probs.shape(),
        });
    }

    let mut kept: Vec<usize> = match policy.entropy_filter {
        EntropyFilter::None => (0..n).collect(),
        filter => {
            let threshold = policy.threshold_for(classes);
            conditional_entropy(target_probs)?
                .into_iter()
                .enumerate()
                .filter(|&(_, h)| match filter {
                    EntropyFilter::OnlyCertain => h < threshold,
                    _ => h >= threshold,
                })
                .map(|(i, _)| i)
                .collect()
        }
    };

    let mut pool = target_features;
    let mut pool_probs = target_probs.clone();
    if policy.include_source {
        if let Some(src) = source {
            if tape.shape(src.features).1 != width {
                return Err(Error::Shape("source features differ in width from target".into()));
            }
            let m = tape.shape(src.features).0;
            pool = tape.concat_rows(&[target_features, src.features])?;
            pool_probs = Tensor::vstack(&[target_probs, &Tensor::one_hot(src.labels, classes)?])?;
            kept.extend(n..n + m);
        }
    }
    if kept.is_empty() {
        return Ok(MixedBatch::default());
    }

    let pairs: Vec<(usize, usize)> = random_draw_pairs(kept.len(), rng)?
        .into_iter()
        .map(|(a, b)| (kept[a], kept[b]))
        .collect();
    let first: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let second: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let phi1 = tape.gather_rows(pool, &first)?;
    let phi2 = tape.gather_rows(pool, &second)?;

    let m = pairs.len();
    let eta = match policy.mode {
        MixMode::Saf => bundle.saf_weight(tape, phi1, phi2)?,
        MixMode::Beta => {
            let beta = Beta::new(policy.beta_alpha, policy.beta_alpha)
                .map_err(|e| Error::Config(format!("beta distribution: {e}")))?;
            let draws = (0..m).map(|_| beta.sample(rng)).collect();
            tape.constant(Tensor::new(m, 1, draws)?)
        }
        MixMode::Constant => {
            if !(0.0..=1.0).contains(&policy.constant_eta) {
                return Err(Error::Config(format!(
                    "constant_eta {} outside [0, 1]",
                    policy.constant_eta
                )));
            }
            tape.constant(Tensor::filled(m, 1, policy.constant_eta))
        }
    };
    let rest = tape.one_minus(eta);

    let a = tape.mul_col(phi1, eta)?;
    let b = tape.mul_col(phi2, rest)?;
    let features = tape.add(a, b)?;

    let y1 = tape.constant(pool_probs.select_rows(&first));
    let y2 = tape.constant(pool_probs.select_rows(&second));
    let a = tape.mul_col(y1, eta)?;
    let b = tape.mul_col(y2, rest)?;
    let soft_labels = tape.add(a, b)?;

    Ok(MixedBatch {
        features: Some(features),
        soft_labels: Some(soft_labels),
        etas: tape.value(eta).data().to_vec(),
        pair_indices: pairs,
    })
}

/// Softmax of the classifier's eval-mode prediction for `features`,
/// computed off-tape.
pub fn pseudo_label_probs<R: Rng + ?Sized>(
    bundle: &mut ModelBundle,
    features: &Tensor,
    rng: &mut R,
) -> Result<Tensor> {
    let mut scratch = Tape::new();
    let x = scratch.constant(features.clone());
    let logits = if bundle.dims.saf_after_bottleneck {
        bundle.classifier_head(&mut scratch, x, false, rng)?
    } else {
        bundle.classify(&mut scratch, x, false, rng)?
    };
    Ok(scratch.value(logits).softmax_rows())
}

/// Mixes target features with pseudo-labels from the current classifier.
pub fn saf_mixup_batch<R: Rng + ?Sized>(
    bundle: &mut ModelBundle,
    tape: &mut Tape,
    target_features: Var,
    policy: &MixupPolicy,
    rng: &mut R,
) -> Result<MixedBatch> {
    let probs = pseudo_label_probs(bundle, &tape.value(target_features).clone(), rng)?;
    saf_mixup_with_labels(bundle, tape, target_features, &probs, None, policy, rng)
}

/// Cross-entropy divergence of the classifier on mixed features against
/// the mixed labels; zero for an empty batch.
pub fn saf_supervision_loss<R: Rng + ?Sized>(
    bundle: &mut ModelBundle,
    tape: &mut Tape,
    mixed: &MixedBatch,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let (Some(features), Some(labels)) = (mixed.features, mixed.soft_labels) else {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    };
    let logits = if bundle.dims.saf_after_bottleneck {
        bundle.classifier_head(tape, features, training, rng)?
    } else {
        bundle.classify(tape, features, training, rng)?
    };
    cross_entropy_divergence(tape, logits, labels)
}
