//! Subspace geometry: routed PCA, principal angles, Grassmann geodesic
//! distance and vectorised-matrix cosine alignment.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::linalg::{complete_orthonormal, orthonormalize_columns, symmetric_eigen, thin_svd};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;

/// Number of principal directions compared between experts unless overridden.
pub const DEFAULT_COMPONENTS: usize = 5;

/// Orthonormal basis of an `n`-dimensional subspace of `R^d`, stored as a
/// `d×n` matrix whose columns are the basis vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace<T> {
    basis: Matrix<T>,
}

impl<T: Scalar> Subspace<T> {
    /// Wraps an existing basis, checking `‖QᵀQ − I‖_max ≤ T::orthonormal_tol()`.
    pub fn from_basis(basis: Matrix<T>) -> Result<Self> {
        let (d, n) = basis.shape();
        if n > d {
            return Err(GeomError::Shape(format!("{n} components exceed ambient dimension {d}")));
        }
        if !basis.is_finite() {
            return Err(GeomError::DegenerateInput("basis has non-finite entries".into()));
        }
        let dev = basis.tr_matmul(&basis).max_abs_diff(&Matrix::identity(n));
        if dev > T::orthonormal_tol() {
            return Err(GeomError::NumericFailure(format!(
                "basis deviates from orthonormal by {dev:e}"
            )));
        }
        Ok(Self { basis })
    }

    /// Orthonormal basis for the column span of `m` (which must have full column rank).
    pub fn spanned_by(m: &Matrix<T>) -> Result<Self> {
        Self::from_basis(orthonormalize_columns(m)?)
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn n_components(&self) -> usize {
        self.basis.cols()
    }

    pub fn basis(&self) -> &Matrix<T> {
        &self.basis
    }

    /// Basis `Q·R` for a (square, orthogonal) change of basis `R`; same subspace.
    pub fn rotated(&self, r: &Matrix<T>) -> Result<Self> {
        if r.shape() != (self.n_components(), self.n_components()) {
            return Err(GeomError::Shape("rotation must be n×n".into()));
        }
        Self::from_basis(self.basis.matmul(r))
    }
}

/// How routing weights enter routed PCA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PcaMode {
    /// Rows are scaled, `h_e = g_e·h`, then analysed with unit weights.
    RowScaled,
    /// Unscaled rows with routing weights as sample weights of the covariance.
    SampleWeighted,
}

impl PcaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PcaMode::RowScaled => "row-scaled",
            PcaMode::SampleWeighted => "sample-weighted",
        }
    }
}

impl std::str::FromStr for PcaMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "row-scaled" => Ok(PcaMode::RowScaled),
            "sample-weighted" => Ok(PcaMode::SampleWeighted),
            other => Err(format!(
                "unknown PCA mode '{other}' (expected row-scaled or sample-weighted)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PcaResult<T> {
    pub subspace: Subspace<T>,
    /// Covariance spectrum, descending, length `min(d, retained samples)`.
    pub eigenvalues: Vec<T>,
    pub explained_variance: Vec<T>,
    pub cumulative_variance: Vec<T>,
    /// Mean subtracted before decomposition (of the scaled rows in row-scaled mode).
    pub weighted_mean: Vec<T>,
    /// Rows with strictly positive weight that entered the decomposition.
    pub retained_samples: usize,
}

/// Centered, weight-scaled design matrix `Y` with `YᵀY` equal to the
/// (weight-normalised) covariance.
struct Design<T> {
    y: Matrix<T>,
    mean: Vec<T>,
}

fn design<T: Scalar>(samples: &Matrix<T>, weights: &[T], n: usize, mode: PcaMode) -> Result<Design<T>> {
    let (rows, d) = samples.shape();
    if weights.len() != rows {
        return Err(GeomError::Shape(format!(
            "{} weights for {rows} samples",
            weights.len()
        )));
    }
    if n == 0 || n > d {
        return Err(GeomError::Shape(format!(
            "cannot extract {n} components in dimension {d}"
        )));
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < T::zero()) {
        return Err(GeomError::DegenerateWeights(format!(
            "weight {i} is negative or non-finite"
        )));
    }
    if let Some(index) = samples.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(GeomError::NonFinite { index });
    }
    let kept: Vec<usize> = (0..rows).filter(|&i| weights[i] > T::zero()).collect();
    if kept.is_empty() {
        return Err(GeomError::DegenerateWeights("all weights are zero".into()));
    }
    if kept.len() < n {
        return Err(GeomError::InsufficientData(format!(
            "{} positively weighted samples, {n} components requested",
            kept.len()
        )));
    }

    let (x, s): (Matrix<T>, Vec<T>) = match mode {
        PcaMode::RowScaled => {
            let mut x = samples.select_rows(&kept);
            for (r, &i) in kept.iter().enumerate() {
                let w = weights[i];
                x.row_mut(r).iter_mut().for_each(|v| *v *= w);
            }
            (x, vec![T::one(); kept.len()])
        }
        PcaMode::SampleWeighted => (samples.select_rows(&kept), kept.iter().map(|&i| weights[i]).collect()),
    };
    let total: T = s.iter().copied().sum();
    let mut mean = vec![T::zero(); d];
    for (r, &sr) in s.iter().enumerate() {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += sr * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);

    let mut y = x;
    for (r, &sr) in s.iter().enumerate() {
        let scale = (sr / total).sqrt();
        for (v, &m) in y.row_mut(r).iter_mut().zip(&mean) {
            *v = (*v - m) * scale;
        }
    }
    Ok(Design { y, mean })
}

fn finish<T: Scalar>(
    mut eigenvalues: Vec<T>,
    directions: Vec<Vec<T>>,
    mean: Vec<T>,
    retained: usize,
) -> Result<PcaResult<T>> {
    for v in eigenvalues.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    let total: T = eigenvalues.iter().copied().sum();
    let explained: Vec<T> = if total > T::zero() {
        eigenvalues.iter().map(|&v| v / total).collect()
    } else {
        vec![T::zero(); eigenvalues.len()]
    };
    let mut acc = T::zero();
    let mut cumulative: Vec<T> = explained
        .iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect();
    if total > T::zero() {
        // partial sums of normalised fractions can overshoot by an ulp
        for c in cumulative.iter_mut() {
            *c = c.min(T::one());
        }
    }
    let d = mean.len();
    let n = directions.len();
    let basis = Matrix::from_fn(d, n, |r, c| directions[c][r]);
    Ok(PcaResult {
        subspace: Subspace::from_basis(basis)?,
        eigenvalues,
        explained_variance: explained,
        cumulative_variance: cumulative,
        weighted_mean: mean,
        retained_samples: retained,
    })
}

/// Routed PCA through the eigendecomposition of the weighted covariance
/// (or of the Gram matrix when there are fewer retained samples than
/// dimensions). Zero-weight rows are dropped before anything else.
pub fn weighted_pca<T: Scalar>(
    samples: &Matrix<T>,
    weights: &[T],
    n_components: usize,
    mode: PcaMode,
) -> Result<PcaResult<T>> {
    let Design { y, mean } = design(samples, weights, n_components, mode)?;
    let (m, d) = y.shape();
    if d <= m {
        let eig = symmetric_eigen(&y.tr_matmul(&y))?;
        let dirs = (0..n_components).map(|c| eig.vectors.column(c)).collect();
        finish(eig.values, dirs, mean, m)
    } else {
        // Gram trick: YYᵀu = λu  ⇒  YᵀY(Yᵀu) = λ(Yᵀu)
        let eig = symmetric_eigen(&y.matmul_tr(&y))?;
        let lmax = eig.values.first().copied().unwrap_or(T::zero()).max(T::zero());
        let floor = lmax * T::epsilon() * T::of_usize(m.max(d));
        let mut dirs = Vec::with_capacity(n_components);
        let mut missing = Vec::new();
        for c in 0..n_components {
            let lambda = eig.values[c];
            if lambda > floor && lambda > T::zero() {
                let u = eig.vectors.column(c);
                let norm = lambda.sqrt();
                dirs.push(
                    (0..d)
                        .map(|k| (0..m).map(|r| y[(r, k)] * u[r]).sum::<T>() / norm)
                        .collect(),
                );
            } else {
                dirs.push(vec![T::zero(); d]);
                missing.push(c);
            }
        }
        complete_orthonormal(&mut dirs, &missing);
        finish(eig.values, dirs, mean, m)
    }
}

/// Same contract as [`weighted_pca`], computed from the thin SVD of the
/// centered, weight-scaled data matrix instead of the covariance.
pub fn weighted_pca_svd<T: Scalar>(
    samples: &Matrix<T>,
    weights: &[T],
    n_components: usize,
    mode: PcaMode,
) -> Result<PcaResult<T>> {
    let Design { y, mean } = design(samples, weights, n_components, mode)?;
    let retained = y.rows();
    let svd = thin_svd(&y)?;
    let eigenvalues = svd.s.iter().map(|&s| s * s).collect();
    let dirs = (0..n_components).map(|c| svd.v.column(c)).collect();
    finish(eigenvalues, dirs, mean, retained)
}

/// Cumulative variance fractions `CV_k` for each requested `k` (1-based).
pub fn variance_profile<T: Scalar>(pca: &PcaResult<T>, ks: &[usize]) -> Result<Vec<T>> {
    let len = pca.eigenvalues.len();
    let total: T = pca.eigenvalues.iter().copied().sum();
    ks.iter()
        .map(|&k| {
            if k == 0 || k > len {
                return Err(GeomError::Bounds { index: k, len });
            }
            if total == T::zero() {
                return Ok(T::zero());
            }
            Ok(pca.eigenvalues[..k].iter().copied().sum::<T>() / total)
        })
        .collect()
}

/// Principal angles, ascending in `[0, π/2]`.
///
/// With `Q1ᵀQ2 = U·diag(σ)·Vᵀ`, the cosines are `σ_k` and the sines are
/// `‖Q2·v_k − σ_k·Q1·u_k‖`, the part of `Q2·v_k` outside `span(Q1)`. The
/// angle is `atan2(sin, cos)`, which stays accurate near 0 where `acos` loses
/// half the digits.
pub fn principal_angles<T: Scalar>(q1: &Subspace<T>, q2: &Subspace<T>) -> Result<Vec<T>> {
    if q1.ambient_dim() != q2.ambient_dim() || q1.n_components() != q2.n_components() {
        return Err(GeomError::Shape(format!(
            "subspaces {}x{} and {}x{} are not comparable",
            q1.ambient_dim(),
            q1.n_components(),
            q2.ambient_dim(),
            q2.n_components()
        )));
    }
    let overlap = q1.basis().tr_matmul(q2.basis());
    let svd = thin_svd(&overlap)?;
    let a = q1.basis().matmul(&svd.u);
    let b = q2.basis().matmul(&svd.v);
    let mut angles = svd
        .s
        .iter()
        .enumerate()
        .map(|(k, &sigma)| {
            if sigma > T::one() + T::clamp_tol() {
                return Err(GeomError::NumericFailure(format!(
                    "principal cosine {sigma} exceeds 1 beyond rounding"
                )));
            }
            let cos = sigma.max(T::zero()).min(T::one());
            let sin = (0..a.rows())
                .map(|r| {
                    let v = b[(r, k)] - sigma * a[(r, k)];
                    v * v
                })
                .sum::<T>()
                .sqrt();
            Ok(sin.atan2(cos))
        })
        .collect::<Result<Vec<T>>>()?;
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    Ok(angles)
}

/// Grassmann geodesic distance `sqrt(Σ θ_m²)`, bounded by `(π/2)·sqrt(n)`.
pub fn grassmann_distance<T: Scalar>(q1: &Subspace<T>, q2: &Subspace<T>) -> Result<T> {
    Ok(principal_angles(q1, q2)?.iter().map(|&t| t * t).sum::<T>().sqrt())
}

/// Largest attainable Grassmann distance between `n`-dimensional subspaces.
pub fn grassmann_max<T: Scalar>(n: usize) -> T {
    T::FRAC_PI_2() * T::of_usize(n).sqrt()
}

/// Cosine similarity of the vectorised matrices, `⟨vec A, vec B⟩ / (‖A‖_F ‖B‖_F)`.
pub fn vectorized_cosine<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(GeomError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let na = a.frobenius_norm();
    let nb = b.frobenius_norm();
    if na == T::zero() || nb == T::zero() {
        return Err(GeomError::DegenerateInput(
            "zero-norm operand (dead or untrained expert?)".into(),
        ));
    }
    let c = dot(a.as_slice(), b.as_slice()) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Evaluates `metric` on the upper triangle (diagonal included) and mirrors it.
pub fn pairwise_metric_matrix<I, T: Scalar>(items: &[I], metric: impl Fn(&I, &I) -> Result<T>) -> Result<Matrix<T>> {
    let e = items.len();
    if e < 2 {
        return Err(GeomError::InsufficientData(format!(
            "pairwise matrix needs at least 2 items, got {e}"
        )));
    }
    let mut out = Matrix::zeros(e, e);
    for i in 0..e {
        for j in i..e {
            let v = metric(&items[i], &items[j]).map_err(|source| GeomError::Pair {
                i,
                j,
                source: Box::new(source),
            })?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffDiagStats<T> {
    pub mean: T,
    pub std: T,
}

impl<T: Scalar> OffDiagStats<T> {
    /// `mean ± std` with three decimals.
    pub fn display(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Mean and population standard deviation of the `E·(E−1)` off-diagonal entries.
pub fn offdiag_stats<T: Scalar>(m: &Matrix<T>) -> Result<OffDiagStats<T>> {
    let (r, c) = m.shape();
    if r != c {
        return Err(GeomError::Shape(format!(
            "off-diagonal statistics need a square matrix, got {r}x{c}"
        )));
    }
    if r < 2 {
        return Err(GeomError::InsufficientData("need at least a 2x2 matrix".into()));
    }
    let values: Vec<T> = (0..r)
        .flat_map(|i| (0..r).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    let count = T::of_usize(values.len());
    let mean = values.iter().copied().sum::<T>() / count;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
    Ok(OffDiagStats { mean, std: var.sqrt() })
}
