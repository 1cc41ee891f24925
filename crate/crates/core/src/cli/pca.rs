//! Two-component PCA by power iteration with deflation.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal directions, largest variance first. Each is signed so
    /// that its largest-magnitude coordinate is positive.
    pub components: [Vec<f64>; 2],
    pub variances: [f64; 2],
    /// Centred data projected onto the components (`n×2`).
    pub projected: Tensor,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn canonical_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn mat_vec(m: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

/// Dominant eigenpair of the symmetric PSD matrix `m` (`d×d`, row-major),
/// kept orthogonal to `against`.
fn power_iteration(m: &[f64], d: usize, against: Option<&[f64]>) -> (Vec<f64>, f64) {
    let project_out = |v: &mut Vec<f64>| {
        if let Some(u) = against {
            let k = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= k * y);
        }
    };
    // A fixed, dense start vector keeps the result deterministic.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
    let before = dot(&v, &v).sqrt();
    project_out(&mut v);
    // Near-total cancellation leaves rounding noise, not a direction.
    if normalize(&mut v) <= 1e-8 * before {
        let axis = match against {
            Some(u) => (0..d).min_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs())).unwrap_or(0),
            None => d - 1,
        };
        v = vec![0.0; d];
        v[axis] = 1.0;
        project_out(&mut v);
        normalize(&mut v);
    }
    for _ in 0..PCA_MAX_ITERATIONS {
        let mut w = mat_vec(m, d, &v);
        project_out(&mut w);
        if normalize(&mut w) == 0.0 {
            break;
        }
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < PCA_TOLERANCE {
            break;
        }
    }
    let lambda = dot(&v, &mat_vec(m, d, &v));
    (v, lambda)
}

/// Top-two principal directions of the rows of `data` and the centred
/// projection onto them.
pub fn pca_2d(data: &Tensor) -> Result<Pca> {
    let (n, d) = data.shape();
    if n < 3 {
        return Err(Error::Data(format!("PCA needs at least 3 samples, got {n}")));
    }
    if d < 2 {
        return Err(Error::Data(format!("PCA to 2-D needs at least 2 features, got {d}")));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|r| data.get(r, j)).sum::<f64>() / n as f64)
        .collect();
    let centred = Tensor::new(
        n,
        d,
        (0..n)
            .flat_map(|r| (0..d).map(move |j| (r, j)))
            .map(|(r, j)| data.get(r, j) - mean[j])
            .collect(),
    )?;
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = centred.row(r);
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += row[i] * row[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);

    let (mut v1, l1) = power_iteration(&cov, d, None);
    canonical_sign(&mut v1);
    let (mut v2, l2) = power_iteration(&cov, d, Some(&v1));
    canonical_sign(&mut v2);

    let projected = Tensor::new(
        n,
        2,
        (0..n)
            .flat_map(|r| [dot(centred.row(r), &v1), dot(centred.row(r), &v2)])
            .collect(),
    )?;
    Ok(Pca {
        mean,
        components: [v1, v2],
        variances: [l1, l2],
        projected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_spread() {
        let data = Tensor::from_rows(&[[-3.0, 0.1], [0.0, -0.2], [3.0, 0.1], [1.0, 0.0]]).unwrap();
        let p = pca_2d(&data).unwrap();
        assert!((p.components[0][0].abs() - 1.0).abs() < 1e-9);
        assert!(p.variances[0] > p.variances[1]);
        for j in 0..2 {
            let m: f64 = (0..4).map(|r| p.projected.get(r, j)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-10);
        }
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(pca_2d(&Tensor::zeros(2, 3)), Err(Error::Data(_))));
    }

    #[test]
    fn degenerate_data_still_gives_orthonormal_basis() {
        let p = pca_2d(&Tensor::zeros(4, 3)).unwrap();
        assert!((dot(&p.components[0], &p.components[0]) - 1.0).abs() < 1e-12);
        assert!(dot(&p.components[0], &p.components[1]).abs() < 1e-12);
    }
}
