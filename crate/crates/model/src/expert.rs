//! Two-layer GELU expert and the single-token MoE mixture.

use moegeom_core::matrix::{dot, Matrix};
use moegeom_core::Scalar;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::activation::{gelu, gelu_prime};
use crate::config::RouterKind;
use crate::routing::route;

/// `f(x) = W2·gelu(W1·x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertMlp<T> {
    /// `d_hidden × d_model`
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    /// `d_model × d_hidden`
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

pub(crate) fn normal_matrix<T: Scalar, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Matrix::from_fn(rows, cols, |_, _| T::lit(dist.sample(rng)))
}

impl<T: Scalar> ExpertMlp<T> {
    pub fn zeros(d_model: usize, d_hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(d_hidden, d_model),
            b1: vec![T::zero(); d_hidden],
            w2: Matrix::zeros(d_model, d_hidden),
            b2: vec![T::zero(); d_model],
        }
    }

    /// Normal weights (`std` for the first layer, `out_std` for the second), zero biases.
    pub fn random<R: Rng>(d_model: usize, d_hidden: usize, std: f64, out_std: f64, rng: &mut R) -> Self {
        Self {
            w1: normal_matrix(d_hidden, d_model, std, rng),
            b1: vec![T::zero(); d_hidden],
            w2: normal_matrix(d_model, d_hidden, out_std, rng),
            b2: vec![T::zero(); d_model],
        }
    }

    pub fn d_model(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_hidden(&self) -> usize {
        self.w1.rows()
    }

    /// First-layer pre-activations `W1·x + b1`.
    pub fn pre_activation(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.d_model(), "expert input width");
        (0..self.d_hidden())
            .map(|j| dot(self.w1.row(j), x) + self.b1[j])
            .collect()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let act: Vec<T> = self.pre_activation(x).into_iter().map(gelu).collect();
        (0..self.d_model())
            .map(|i| dot(self.w2.row(i), &act) + self.b2[i])
            .collect()
    }

    /// Exact input Jacobian `W2·diag(gelu'(W1·x + b1))·W1`.
    pub fn jacobian(&self, x: &[T]) -> Matrix<T> {
        let slope: Vec<T> = self.pre_activation(x).into_iter().map(gelu_prime).collect();
        self.jacobian_from_slope(&slope)
    }

    /// `W2·diag(slope)·W1` for an arbitrary hidden-unit slope vector. Because the
    /// Jacobian is linear in the slope, a weighted mean of slopes yields the
    /// weighted mean Jacobian.
    pub fn jacobian_from_slope(&self, slope: &[T]) -> Matrix<T> {
        assert_eq!(slope.len(), self.d_hidden());
        let mut scaled = self.w1.clone();
        for (j, &s) in slope.iter().enumerate() {
            scaled.row_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        self.w2.matmul(&scaled)
    }
}

/// Router projection plus experts; the mixture `Σ_e g_e(x)·f_e(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeLayer<T> {
    /// `E × d_model` logit projection.
    pub router: Matrix<T>,
    pub experts: Vec<ExpertMlp<T>>,
    pub kind: RouterKind,
}

impl<T: Scalar> MoeLayer<T> {
    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn logits(&self, x: &[T]) -> Vec<T> {
        (0..self.router.rows()).map(|e| dot(self.router.row(e), x)).collect()
    }

    pub fn gates(&self, x: &[T]) -> Vec<T> {
        route(&self.logits(x), &self.kind)
    }

    /// Output and routing weights for one token. Experts with zero weight are skipped.
    pub fn forward(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        let g = self.gates(x);
        let mut y = vec![T::zero(); x.len()];
        for (expert, &w) in self.experts.iter().zip(&g) {
            if w > T::zero() {
                for (acc, v) in y.iter_mut().zip(expert.forward(x)) {
                    *acc += w * v;
                }
            }
        }
        (y, g)
    }
}
