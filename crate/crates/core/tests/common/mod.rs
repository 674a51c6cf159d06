#![allow(dead_code)]

use moegeom_core::matrix::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Classical Gram-Schmidt with one re-orthogonalisation pass, kept separate
/// from the library's own orthonormalisation.
pub fn gram_schmidt(m: &Matrix<f64>) -> Matrix<f64> {
    let (d, n) = m.shape();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for c in 0..n {
        let mut v = m.column(c);
        for _ in 0..2 {
            for q in &cols {
                let p: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    Matrix::from_fn(d, n, |r, c| cols[c][r])
}

pub fn random_orthonormal(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    gram_schmidt(&gaussian(d, n, rng))
}

/// Random `n×n` orthogonal matrix.
pub fn random_rotation(n: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    random_orthonormal(n, n, rng)
}
