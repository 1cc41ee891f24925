//! Differentiable training losses, recorded on a [`Tape`].

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Tolerance on soft-label row sums accepted by [`cross_entropy_divergence`].
pub const SOFT_LABEL_TOLERANCE: f64 = 1e-6;

/// Margin threshold `ϱ` and the source-term weight `γ = e^ϱ` of the MDD loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginParams {
    rho: f64,
    gamma: f64,
}

impl MarginParams {
    pub fn from_rho(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("margin threshold {rho} must be positive")));
        }
        Ok(Self {
            rho,
            gamma: rho.exp(),
        })
    }

    pub fn from_gamma(gamma: f64) -> Result<Self> {
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("margin weight {gamma} must exceed 1")));
        }
        Ok(Self {
            rho: gamma.ln(),
            gamma,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for MarginParams {
    /// `γ = 4`.
    fn default() -> Self {
        Self::from_gamma(4.0).expect("valid")
    }
}

/// Rows of non-negative weights that each sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabelBatch(Tensor);

impl SoftLabelBatch {
    pub fn new(matrix: Tensor) -> Result<Self> {
        check_distribution_rows(&matrix, 1e-9)?;
        Ok(Self(matrix))
    }

    pub fn matrix(&self) -> &Tensor {
        &self.0
    }

    pub fn into_inner(self) -> Tensor {
        self.0
    }
}

pub(crate) fn check_distribution_rows(m: &Tensor, tol: f64) -> Result<()> {
    for r in 0..m.rows() {
        let row = m.row(r);
        if let Some(v) = row.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(Error::Data(format!("row {r} has invalid weight {v}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::Data(format!("row {r} sums to {s}, not 1")));
        }
    }
    Ok(())
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::Data(format!("label {y} at row {i} outside [0, {classes})")));
    }
    Ok(())
}

/// `−(1/m) Σ_rows Σ_y w_y · log softmax(x)_y` for a weight matrix already on the tape.
fn weighted_nll(tape: &mut Tape, logits: Var, weights: Var) -> Result<Var> {
    let m = tape.shape(logits).0;
    let log_probs = tape.log_softmax_rows(logits)?;
    let picked = tape.mul(log_probs, weights)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / m as f64))
}

/// Mean negative log-likelihood of integer labels under row softmax.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (m, k) = tape.shape(logits);
    if m == 0 {
        return Err(Error::Data("cross-entropy of an empty batch".into()));
    }
    check_labels(labels, m, k)?;
    let mask = tape.constant(Tensor::one_hot(labels, k)?);
    weighted_nll(tape, logits, mask)
}

/// Cross-entropy against distribution-valued labels, `E[−Yᵀ log σ(X)]`.
///
/// `soft_labels` may itself carry gradient (mixed labels depend on the
/// mixing weight); its rows must sum to one within [`SOFT_LABEL_TOLERANCE`].
pub fn cross_entropy_divergence(tape: &mut Tape, logits: Var, soft_labels: Var) -> Result<Var> {
    if tape.shape(logits) != tape.shape(soft_labels) {
        return Err(Error::Dimension {
            op: "cross_entropy_divergence",
            lhs: tape.shape(logits),
            rhs: tape.shape(soft_labels),
        });
    }
    if tape.shape(logits).0 == 0 {
        return Err(Error::Data("cross-entropy divergence of an empty batch".into()));
    }
    check_distribution_rows(tape.value(soft_labels), SOFT_LABEL_TOLERANCE)?;
    weighted_nll(tape, logits, soft_labels)
}

/// Domain-classification loss of a two-way discriminator: source rows
/// carry domain label 0, target rows label 1; averaged over all rows.
pub fn dann_domain_loss(tape: &mut Tape, d_src: Var, d_tgt: Var) -> Result<Var> {
    for v in [d_src, d_tgt] {
        if tape.shape(v).1 != 2 {
            return Err(Error::Shape(format!(
                "domain discriminator must have 2 outputs, got {}",
                tape.shape(v).1
            )));
        }
    }
    let (ms, mt) = (tape.shape(d_src).0, tape.shape(d_tgt).0);
    let logits = tape.concat_rows(&[d_src, d_tgt])?;
    let labels: Vec<usize> = std::iter::repeat_n(0, ms).chain(std::iter::repeat_n(1, mt)).collect();
    cross_entropy(tape, logits, &labels)
}

/// The two MDD adversarial terms, before summation.
#[derive(Clone, Copy, Debug)]
pub struct MddTerms {
    /// `γ · mean(−log σ(D(x))_ŷ)` over source rows.
    pub source: Var,
    /// `mean(−log(1 − σ(D(x))_ŷ))` over target rows.
    pub target: Var,
}

/// MDD adversarial terms. `ŷ` is the argmax of the main classifier's
/// logits, taken as a constant. The adversary minimizing the sum agrees
/// with C on source and disagrees on target.
pub fn mdd_terms(
    tape: &mut Tape,
    c_src: Var,
    d_src: Var,
    c_tgt: Var,
    d_tgt: Var,
    params: MarginParams,
) -> Result<MddTerms> {
    for (c, d) in [(c_src, d_src), (c_tgt, d_tgt)] {
        if tape.shape(c) != tape.shape(d) {
            return Err(Error::Dimension {
                op: "mdd_adversarial_loss",
                lhs: tape.shape(c),
                rhs: tape.shape(d),
            });
        }
    }
    let y_src = tape.value(c_src).argmax_rows();
    let y_tgt = tape.value(c_tgt).argmax_rows();
    let ce_src = cross_entropy(tape, d_src, &y_src)?;
    let source = tape.scale(ce_src, params.gamma());
    let log_comp = tape.log_complement_softmax(d_tgt, &y_tgt)?;
    let mean = tape.mean(log_comp)?;
    let target = tape.scale(mean, -1.0);
    Ok(MddTerms { source, target })
}

/// Sum of [`mdd_terms`].
pub fn mdd_adversarial_loss(
    tape: &mut Tape,
    c_src: Var,
    d_src: Var,
    c_tgt: Var,
    d_tgt: Var,
    params: MarginParams,
) -> Result<Var> {
    let terms = mdd_terms(tape, c_src, d_src, c_tgt, d_tgt, params)?;
    tape.add(terms.source, terms.target)
}
