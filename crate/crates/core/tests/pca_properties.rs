mod common;

use common::{gaussian, rng};
use moegeom_core::geometry::{grassmann_distance, weighted_pca, weighted_pca_svd, PcaMode};
use moegeom_core::linalg::{symmetric_eigen, thin_svd};
use moegeom_core::matrix::Matrix;
use proptest::prelude::*;
use rand::Rng;

fn weights(n: usize, zero_fraction: f64, r: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if r.random::<f64>() < zero_fraction {
                0.0
            } else {
                r.random_range(0.05..1.0)
            }
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigen_and_svd_routes_agree(seed in any::<u64>(), n in 8usize..60, d in 4usize..24, sample_weighted in any::<bool>()) {
        let mut r = rng(seed);
        // anisotropic data so the leading components are well separated
        let scale: Vec<f64> = (0..d).map(|c| 3.0 / (1.0 + c as f64)).collect();
        let x = Matrix::from_fn(n, d, |_, c| scale[c] * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut r));
        let w = weights(n, 0.2, &mut r);
        prop_assume!(w.iter().filter(|&&v| v > 0.0).count() >= 6);
        let mode = if sample_weighted { PcaMode::SampleWeighted } else { PcaMode::RowScaled };
        let k = 3;
        let a = weighted_pca(&x, &w, k, mode).unwrap();
        let b = weighted_pca_svd(&x, &w, k, mode).unwrap();
        let top = a.eigenvalues[0];
        for (ea, eb) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            if *ea > 1e-10 * top {
                prop_assert!(rel(*ea, *eb) <= 1e-8, "{ea} vs {eb}");
            }
        }
        let gap_ok = a.eigenvalues[k - 1] > 1.01 * a.eigenvalues.get(k).copied().unwrap_or(0.0);
        if gap_ok {
            prop_assert!(grassmann_distance(&a.subspace, &b.subspace).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn fractions_are_a_distribution(seed in any::<u64>(), n in 6usize..40, d in 3usize..16) {
        let mut r = rng(seed);
        let x = gaussian(n, d, &mut r);
        let w = weights(n, 0.0, &mut r);
        let p = weighted_pca(&x, &w, 2, PcaMode::SampleWeighted).unwrap();
        prop_assert!((p.explained_variance.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.cumulative_variance.windows(2).all(|c| c[0] <= c[1]));
        prop_assert!(*p.cumulative_variance.last().unwrap() <= 1.0);
        prop_assert!(p.eigenvalues.windows(2).all(|e| e[0] >= e[1]));
    }

    #[test]
    fn sample_weights_are_scale_free(seed in any::<u64>(), c in 0.001f64..1000.0) {
        let mut r = rng(seed);
        let x = gaussian(30, 6, &mut r);
        let w = weights(30, 0.1, &mut r);
        let wc: Vec<f64> = w.iter().map(|v| v * c).collect();
        let a = weighted_pca(&x, &w, 2, PcaMode::SampleWeighted).unwrap();
        let b = weighted_pca(&x, &wc, 2, PcaMode::SampleWeighted).unwrap();
        for (ea, eb) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!(rel(*ea, *eb) < 1e-9);
        }
        prop_assert!(grassmann_distance(&a.subspace, &b.subspace).unwrap() < 1e-6);
    }

    #[test]
    fn zero_weight_rows_are_invisible(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = gaussian(20, 5, &mut r);
        let mut w = weights(20, 0.0, &mut r);
        let keep: Vec<usize> = (0..20).filter(|i| i % 3 != 0).collect();
        for i in (0..20).filter(|i| i % 3 == 0) {
            w[i] = 0.0;
        }
        let wk: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
        for mode in [PcaMode::SampleWeighted, PcaMode::RowScaled] {
            let full = weighted_pca(&x, &w, 2, mode).unwrap();
            let kept = weighted_pca(&x.select_rows(&keep), &wk, 2, mode).unwrap();
            prop_assert_eq!(full.retained_samples, keep.len());
            for (a, b) in full.eigenvalues.iter().zip(&kept.eigenvalues) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn svd_reconstructs(seed in any::<u64>(), rows in 1usize..12, cols in 1usize..12) {
        let mut r = rng(seed);
        let a = gaussian(rows, cols, &mut r);
        let svd = thin_svd(&a).unwrap();
        let k = svd.s.len();
        prop_assert_eq!(k, rows.min(cols));
        let us = Matrix::from_fn(rows, k, |i, j| svd.u[(i, j)] * svd.s[j]);
        prop_assert!(us.matmul_tr(&svd.v).max_abs_diff(&a) <= 1e-12 * (1.0 + a.max_abs()));
        prop_assert!(svd.u.tr_matmul(&svd.u).max_abs_diff(&Matrix::identity(k)) <= 1e-12);
        prop_assert!(svd.v.tr_matmul(&svd.v).max_abs_diff(&Matrix::identity(k)) <= 1e-12);
        prop_assert!(svd.s.windows(2).all(|s| s[0] >= s[1]) && svd.s.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn symmetric_eigenpairs(seed in any::<u64>(), n in 1usize..14) {
        let mut r = rng(seed);
        let b = gaussian(n, n, &mut r);
        let s = b.add(&b.transpose());
        let eig = symmetric_eigen(&s).unwrap();
        let lam = Matrix::diag(&eig.values);
        let recon = eig.vectors.matmul(&lam).matmul_tr(&eig.vectors);
        prop_assert!(recon.max_abs_diff(&s) <= 1e-11 * (1.0 + s.max_abs()));
    }
}

#[test]
fn random_five_by_three_svd_residual() {
    let mut r = rng(5);
    let a = gaussian(5, 3, &mut r);
    let svd = thin_svd(&a).unwrap();
    let us = Matrix::from_fn(5, 3, |i, j| svd.u[(i, j)] * svd.s[j]);
    assert!(us.matmul_tr(&svd.v).max_abs_diff(&a) < 1e-12);
}

#[test]
fn sample_weighted_half_zero_oracle() {
    // weights {1, 1, 0, 0}: only the first two rows count
    let x = Matrix::from_rows(&[
        vec![1.0, 2.0, 0.0],
        vec![3.0, -2.0, 1.0],
        vec![100.0, 5.0, 7.0],
        vec![-8.0, 9.0, 40.0],
    ])
    .unwrap();
    let p = weighted_pca(&x, &[1.0, 1.0, 0.0, 0.0], 1, PcaMode::SampleWeighted).unwrap();
    let delta = [2.0f64, -4.0, 1.0];
    let norm2: f64 = delta.iter().map(|v| v * v).sum();
    // covariance ½Σ(x_i − μ)(x_i − μ)ᵀ has the single eigenvalue |x1 − x2|²/4
    assert!((p.eigenvalues[0] - norm2 / 4.0).abs() < 1e-12);
    assert!(p.eigenvalues[1..].iter().all(|v| v.abs() < 1e-12));
    let dir = p.subspace.basis().column(0);
    let c: f64 = dir.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>() / norm2.sqrt();
    assert!((c.abs() - 1.0).abs() < 1e-12);
    assert_eq!(p.weighted_mean, vec![2.0, 0.0, 0.5]);
    assert_eq!(p.retained_samples, 2);
}

#[test]
fn row_scaled_oracle() {
    // scaled rows g·x, then an unweighted centred PCA over the routed rows
    let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![5.0, 5.0]]).unwrap();
    let g = [0.5, 1.0, 0.25, 0.0];
    let p = weighted_pca(&x, &g, 1, PcaMode::RowScaled).unwrap();
    let rows: [[f64; 2]; 3] = [[0.5, 0.0], [0.0, 1.0], [0.25, 0.25]];
    let mean: [f64; 2] = [0.75 / 3.0, 1.25 / 3.0];
    let mut cov = [[0.0f64; 2]; 2];
    for r in rows {
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / 3.0;
            }
        }
    }
    let tr = cov[0][0] + cov[1][1];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let top = tr / 2.0 + (tr * tr / 4.0 - det).sqrt();
    assert!((p.eigenvalues[0] - top).abs() < 1e-12);
    assert!((p.weighted_mean[0] - mean[0]).abs() < 1e-15);
}

#[test]
fn isotropic_spectrum_is_flat() {
    // ±e_i for every axis: identity covariance up to scale
    let d = 6;
    let x = Matrix::from_fn(2 * d, d, |r, c| {
        if r % d == c {
            if r < d {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        }
    });
    let p = weighted_pca(&x, &vec![1.0; 2 * d], 3, PcaMode::SampleWeighted).unwrap();
    for v in &p.explained_variance {
        assert!((v - 1.0 / d as f64).abs() < 1e-12);
    }
    assert!((p.cumulative_variance[3] - 4.0 / d as f64).abs() < 1e-12);
}
