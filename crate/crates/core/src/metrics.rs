//! Non-differentiable diagnostics: margins, margin disparity, entropy,
//! H-divergence and accuracy.

use crate::autodiff::{argmax, Tensor};
use crate::error::{Error, Result};

/// Half the gap between the exemplar's probability and the best other class.
pub fn margin(probs: &[f64], exemplar: usize) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::Shape(format!(
            "margin needs at least 2 classes, got {}",
            probs.len()
        )));
    }
    if exemplar >= probs.len() {
        return Err(Error::Data(format!("exemplar {exemplar} outside the row")));
    }
    let rival = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != exemplar)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(0.5 * (probs[exemplar] - rival))
}

/// Ramp loss: 1 below zero, `1 − ρ/ϱ` on `[0, ϱ]`, 0 above `ϱ`.
pub fn margin_loss(rho_val: f64, threshold: f64) -> f64 {
    if rho_val < 0.0 {
        1.0
    } else if rho_val <= threshold {
        1.0 - rho_val / threshold
    } else {
        0.0
    }
}

/// Mean margin loss of C measured against C′'s predicted labels.
pub fn empirical_margin_disparity(
    probs_c: &Tensor,
    probs_c_prime: &Tensor,
    threshold: f64,
) -> Result<f64> {
    if probs_c.shape() != probs_c_prime.shape() {
        return Err(Error::Dimension {
            op: "empirical_margin_disparity",
            lhs: probs_c.shape(),
            rhs: probs_c_prime.shape(),
        });
    }
    if probs_c.rows() == 0 {
        return Err(Error::Data("margin disparity of an empty batch".into()));
    }
    let mut total = 0.0;
    for r in 0..probs_c.rows() {
        let exemplar = argmax(probs_c_prime.row(r));
        total += margin_loss(margin(probs_c.row(r), exemplar)?, threshold);
    }
    Ok(total / probs_c.rows() as f64)
}

/// `2·(Δ̂_S − Δ̂_T)` with the current adversary standing in for the
/// maximizing auxiliary classifier, so the value bounds the true
/// discrepancy from below.
pub fn empirical_mdd_estimate(delta_src: f64, delta_tgt: f64) -> f64 {
    2.0 * (delta_src - delta_tgt)
}

/// Per-row entropy `−Σ p log p` with `0·log 0 = 0`.
pub fn conditional_entropy(probs: &Tensor) -> Result<Vec<f64>> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            if let Some(p) = row.iter().find(|p| **p < 0.0) {
                return Err(Error::Data(format!("negative probability {p} in row {r}")));
            }
            Ok(-row
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>())
        })
        .collect()
}

/// A binary domain classifier over feature rows.
pub trait Hypothesis {
    /// 0 = source, 1 = target.
    fn predict(&self, x: &[f64]) -> u8;
}

/// Axis-aligned threshold: predicts `1` when `x[axis] > threshold`,
/// inverted when `flipped`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdStump {
    pub axis: usize,
    pub threshold: f64,
    pub flipped: bool,
}

impl Hypothesis for ThresholdStump {
    fn predict(&self, x: &[f64]) -> u8 {
        u8::from((x[self.axis] > self.threshold) != self.flipped)
    }
}

pub const DEFAULT_STUMP_GRID: usize = 64;

/// Stumps at `grid` evenly spaced cut points per axis over the joint range
/// of both samples (cell midpoints), in both polarities.
pub fn threshold_stumps(src: &Tensor, tgt: &Tensor, grid: usize) -> Vec<ThresholdStump> {
    let dims = src.cols().max(tgt.cols());
    let mut out = Vec::with_capacity(dims * grid * 2);
    for axis in 0..dims {
        let values = (0..src.rows())
            .map(|r| src.get(r, axis))
            .chain((0..tgt.rows()).map(|r| tgt.get(r, axis)));
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        if !lo.is_finite() {
            continue;
        }
        let step = (hi - lo) / grid as f64;
        for j in 0..grid {
            let threshold = lo + (j as f64 + 0.5) * step;
            for flipped in [false, true] {
                out.push(ThresholdStump {
                    axis,
                    threshold,
                    flipped,
                });
            }
        }
    }
    out
}

/// `2·(1 − min_h [P̂_S(h = 0) + P̂_T(h = 1)])` by exhaustive enumeration.
///
/// For a hypothesis set closed under label flips the bracket's minimum
/// equals the minimum summed domain-classification error.
pub fn empirical_h_divergence<H: Hypothesis>(
    src: &Tensor,
    tgt: &Tensor,
    hypotheses: &[H],
) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Config("H-divergence needs at least one hypothesis".into()));
    }
    if src.rows() == 0 || tgt.rows() == 0 {
        return Err(Error::Data("H-divergence needs non-empty samples".into()));
    }
    if src.cols() != tgt.cols() {
        return Err(Error::Dimension {
            op: "empirical_h_divergence",
            lhs: src.shape(),
            rhs: tgt.shape(),
        });
    }
    let (ns, nt) = (src.rows() as f64, tgt.rows() as f64);
    let mut best = f64::INFINITY;
    for h in hypotheses {
        let s0 = (0..src.rows()).filter(|&r| h.predict(src.row(r)) == 0).count() as f64;
        let t1 = (0..tgt.rows()).filter(|&r| h.predict(tgt.row(r)) == 1).count() as f64;
        best = best.min(s0 / ns + t1 / nt);
    }
    Ok(2.0 * (1.0 - best))
}

/// H-divergence over the default stump grid.
pub fn stump_h_divergence(src: &Tensor, tgt: &Tensor) -> Result<f64> {
    let stumps = threshold_stumps(src, tgt, DEFAULT_STUMP_GRID);
    empirical_h_divergence(src, tgt, &stumps)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.rows() == 0 {
        return Err(Error::Data("accuracy of an empty batch".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::Data(format!("label {y} outside [0, {})", logits.cols())));
    }
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_examples() {
        assert_eq!(margin(&[1.0, 0.0], 0).unwrap(), 0.5);
        assert_eq!(margin(&[0.25; 4], 2).unwrap(), 0.0);
        assert!((margin(&[0.2, 0.7, 0.1], 0).unwrap() + 0.25).abs() < 1e-15);
        assert!(margin(&[], 0).is_err());
    }

    #[test]
    fn margin_loss_canonical_points() {
        let rho = 0.3;
        assert_eq!(margin_loss(-0.1, rho), 1.0);
        assert_eq!(margin_loss(rho, rho), 0.0);
        assert_eq!(margin_loss(rho / 2.0, rho), 0.5);
        assert_eq!(margin_loss(0.49, rho), 0.0);
    }

    #[test]
    fn disparity_endpoints() {
        let confident = Tensor::from_rows(&[[0.9, 0.1], [0.05, 0.95]]).unwrap();
        assert_eq!(empirical_margin_disparity(&confident, &confident, 0.2).unwrap(), 0.0);
        let opposite = Tensor::from_rows(&[[0.1, 0.9], [0.95, 0.05]]).unwrap();
        assert_eq!(empirical_margin_disparity(&confident, &opposite, 0.2).unwrap(), 1.0);
        assert!(empirical_margin_disparity(&confident, &Tensor::zeros(2, 3), 0.2).is_err());
    }

    #[test]
    fn mdd_estimate_range_endpoints() {
        assert_eq!(empirical_mdd_estimate(0.4, 0.4), 0.0);
        assert_eq!(empirical_mdd_estimate(1.0, 0.0), 2.0);
        assert_eq!(empirical_mdd_estimate(0.0, 1.0), -2.0);
    }

    #[test]
    fn entropy_endpoints() {
        let h = conditional_entropy(&Tensor::from_rows(&[[0.0, 1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(h, vec![0.0]);
        let h = conditional_entropy(&Tensor::filled(1, 10, 0.1)).unwrap();
        assert!((h[0] - 10f64.ln()).abs() < 1e-12);
        let h = conditional_entropy(&Tensor::filled(1, 2, 0.5)).unwrap();
        assert!((h[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(conditional_entropy(&Tensor::from_rows(&[[-0.1, 1.1]]).unwrap()).is_err());
    }

    #[test]
    fn h_divergence_identical_and_separated() {
        let pts = Tensor::from_rows(&[[0.1, 2.0], [-0.4, 1.0], [0.9, -0.3], [0.0, 0.0]]).unwrap();
        assert_eq!(stump_h_divergence(&pts, &pts).unwrap(), 0.0);

        let left = Tensor::from_rows(&[[-1.0, 0.3], [-0.6, -2.0], [-0.8, 1.0]]).unwrap();
        let right = Tensor::from_rows(&[[0.5, 0.0], [1.0, 5.0]]).unwrap();
        assert_eq!(stump_h_divergence(&left, &right).unwrap(), 2.0);
        assert_eq!(stump_h_divergence(&right, &left).unwrap(), 2.0);
    }

    #[test]
    fn h_divergence_needs_hypotheses() {
        let pts = Tensor::zeros(2, 2);
        let none: [ThresholdStump; 0] = [];
        assert!(matches!(
            empirical_h_divergence(&pts, &pts, &none),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn accuracy_tie_rule_and_errors() {
        let logits = Tensor::zeros(4, 3);
        assert_eq!(accuracy(&logits, &[0, 1, 0, 2]).unwrap(), 0.5);
        let perfect = Tensor::from_rows(&[[0.0, 1.0], [2.0, 0.0]]).unwrap();
        assert_eq!(accuracy(&perfect, &[1, 0]).unwrap(), 1.0);
        assert!(accuracy(&Tensor::zeros(0, 2), &[]).is_err());
    }
}
