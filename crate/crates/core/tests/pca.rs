mod common;

use common::grad::normal;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use saf_lab::autodiff::Tensor;
use saf_lab::cli::pca_2d;
use saf_lab::LabRng;

/// Eigenpairs of the sample covariance from a dense solver, largest first.
fn oracle(data: &Tensor) -> Vec<(f64, Vec<f64>)> {
    let (n, d) = data.shape();
    let x = DMatrix::from_row_slice(n, d, data.data());
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - mean[c]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn same_up_to_sign(a: &[f64], b: &[f64], tol: f64) -> bool {
    let plus = a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
    let minus = a.iter().zip(b).all(|(x, y)| (x + y).abs() <= tol);
    plus || minus
}

#[test]
fn directions_match_a_dense_eigensolver_on_five_points() {
    let mut rng = LabRng::seed_from_u64(31);
    let mut checked = 0;
    for trial in 0..200 {
        let d = 2 + trial % 5;
        // Distinct per-axis scales give well-separated spectra.
        let scales: Vec<f64> = (0..d).map(|j| 3.0 / (1.0 + j as f64)).collect();
        let raw = normal(&mut rng, 5, d);
        let data = Tensor::new(5, d, raw.data().iter().enumerate().map(|(i, v)| v * scales[i % d]).collect()).unwrap();
        let want = oracle(&data);
        let got = pca_2d(&data).unwrap();
        // Power iteration converges at rate λ₂/λ₁ (and λ₃/λ₂ after
        // deflation); nearly degenerate spectra have no stable direction.
        let all: Vec<f64> = want.iter().map(|p| p.0).collect();
        if all[1] / all[0] > 0.9 || (d > 2 && all[2] / all[1] > 0.9) {
            continue;
        }
        checked += 1;
        for k in 0..2 {
            assert!((got.variances[k] - want[k].0).abs() <= 1e-8 * want[0].0.max(1.0), "trial {trial} λ{k}");
            assert!(
                same_up_to_sign(&got.components[k], &want[k].1, 1e-8),
                "trial {trial} direction {k}: {:?} vs {:?}",
                got.components[k],
                want[k].1
            );
        }
    }
    assert!(checked >= 100, "only {checked} well-separated instances");
}

#[test]
fn centred_planar_data_is_projected_isometrically() {
    let mut rng = LabRng::seed_from_u64(32);
    for _ in 0..50 {
        let raw = normal(&mut rng, 30, 2);
        let data = Tensor::new(30, 2, raw.data().iter().enumerate().map(|(i, v)| if i % 2 == 0 { 2.0 * v } else { *v }).collect()).unwrap();
        let p = pca_2d(&data).unwrap();
        for i in 0..30 {
            for j in 0..i {
                let before = ((data.get(i, 0) - data.get(j, 0)).powi(2) + (data.get(i, 1) - data.get(j, 1)).powi(2)).sqrt();
                let after = ((p.projected.get(i, 0) - p.projected.get(j, 0)).powi(2)
                    + (p.projected.get(i, 1) - p.projected.get(j, 1)).powi(2))
                .sqrt();
                assert!((before - after).abs() <= 1e-8);
            }
        }
        for c in 0..2 {
            let mean = (0..30).map(|r| p.projected.get(r, c)).sum::<f64>() / 30.0;
            assert!(mean.abs() <= 1e-10);
        }
    }
}

#[test]
fn too_few_samples_is_a_data_error() {
    let err = pca_2d(&Tensor::zeros(2, 3)).unwrap_err();
    assert!(matches!(err, saf_lab::Error::Data(_)));
}
