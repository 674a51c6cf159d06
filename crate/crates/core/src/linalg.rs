//! Jacobi-family decompositions.
//!
//! * [`thin_svd`]: one-sided (Hestenes) Jacobi. Columns of a working copy are
//!   rotated pairwise until every pair is orthogonal to `T::jacobi_tol()`
//!   relative to the product of their norms; the column norms are then the
//!   singular values.
//! * [`symmetric_eigen`]: classical cyclic two-sided Jacobi for symmetric
//!   matrices.
//!
//! Both stop after [`MAX_SWEEPS`] full sweeps and report a numeric failure.

use crate::error::{GeomError, Result};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;

pub const MAX_SWEEPS: usize = 100;

/// Thin singular value decomposition `M = U·diag(S)·Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

/// Symmetric eigendecomposition, eigenvalues descending, vectors as columns.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

pub fn thin_svd<T: Scalar>(m: &Matrix<T>) -> Result<Svd<T>> {
    if let Some(index) = m.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(GeomError::NonFinite { index });
    }
    let (p, q) = m.shape();
    if p < q {
        let t = thin_svd(&m.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }

    // rows of `a` are the columns of M; rows of `vt` are the columns of V
    let mut a = m.transpose();
    let mut vt = Matrix::<T>::identity(q);
    let tol = T::jacobi_tol();
    let two = T::lit(2.0);

    let mut converged = q < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..q {
            for j in (i + 1)..q {
                let (alpha, beta, gamma) = {
                    let (ai, aj) = (a.row(i), a.row(j));
                    (dot(ai, ai), dot(aj, aj), dot(ai, aj))
                };
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (two * gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut a, i, j, c, s);
                rotate_rows(&mut vt, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(GeomError::NumericFailure(format!(
            "one-sided Jacobi SVD did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<T> = (0..q).map(|j| dot(a.row(j), a.row(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).expect("finite norms"));

    let smax = order.first().map_or(T::zero(), |&j| norms[j]);
    let null_tol = smax * T::epsilon() * T::of_usize(p.max(1));

    let mut s = Vec::with_capacity(q);
    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(q);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let sj = norms[j];
        if sj > null_tol && sj > T::zero() {
            u_cols.push(a.row(j).iter().map(|&x| x / sj).collect());
            s.push(sj);
        } else {
            u_cols.push(vec![T::zero(); p]);
            s.push(T::zero());
            missing.push(slot);
        }
    }
    complete_orthonormal(&mut u_cols, &missing);

    let u = Matrix::from_fn(p, q, |r, c| u_cols[c][r]);
    let v = Matrix::from_fn(q, q, |r, c| vt[(order[c], r)]);
    Ok(Svd { u, s, v })
}

#[inline]
fn rotate_rows<T: Scalar>(m: &mut Matrix<T>, i: usize, j: usize, c: T, s: T) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(j * cols);
    let ri = &mut head[i * cols..(i + 1) * cols];
    let rj = &mut tail[..cols];
    for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Fills the listed slots of `cols` with unit vectors orthogonal to every
/// other column, choosing at each step the coordinate axis with the largest
/// component outside the current span.
pub(crate) fn complete_orthonormal<T: Scalar>(cols: &mut [Vec<T>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let p = cols[0].len();
    let mut filled: Vec<bool> = (0..cols.len()).map(|i| !missing.contains(&i)).collect();
    for &slot in missing {
        let mut best: Option<(T, Vec<T>)> = None;
        for axis in 0..p {
            let mut cand = vec![T::zero(); p];
            cand[axis] = T::one();
            // two Gram-Schmidt passes
            for _ in 0..2 {
                for (k, col) in cols.iter().enumerate() {
                    if filled[k] {
                        let proj = dot(&cand, col);
                        for (x, &y) in cand.iter_mut().zip(col) {
                            *x -= proj * y;
                        }
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
        }
        let (norm, mut v) = best.expect("ambient dimension exceeds basis size");
        for x in v.iter_mut() {
            *x /= norm;
        }
        cols[slot] = v;
        filled[slot] = true;
    }
}

pub fn symmetric_eigen<T: Scalar>(s: &Matrix<T>) -> Result<SymEigen<T>> {
    let n = s.rows();
    if s.cols() != n {
        return Err(GeomError::Shape(format!(
            "symmetric_eigen needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if let Some(index) = s.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(GeomError::NonFinite { index });
    }
    let mut a = s.clone();
    let mut v = Matrix::<T>::identity(n);
    let tol = T::jacobi_tol();
    let two = T::lit(2.0);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero()
                    || apq.abs() <= tol * (a[(p, p)].abs() * a[(q, q)].abs()).sqrt()
                    || apq.abs() < T::min_positive_value()
                {
                    continue;
                }
                rotated = true;
                let theta = (a[(q, q)] - a[(p, p)]) / (two * apq);
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                rotate_rows(&mut a, p, q, c, sn);
                a[(p, q)] = T::zero();
                a[(q, p)] = T::zero();
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(GeomError::NumericFailure(format!(
            "Jacobi eigensolver did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(y, y)].partial_cmp(&a[(x, x)]).expect("finite diagonal"));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

/// Orthonormalises the columns of `m` (modified Gram-Schmidt, two passes).
/// Fails when the columns are numerically dependent.
pub fn orthonormalize_columns<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let (p, n) = m.shape();
    if n > p {
        return Err(GeomError::Shape(format!(
            "{n} columns cannot be independent in dimension {p}"
        )));
    }
    let mut cols: Vec<Vec<T>> = (0..n).map(|c| m.column(c)).collect();
    for j in 0..n {
        let original = dot(&cols[j], &cols[j]).sqrt();
        for _ in 0..2 {
            for k in 0..j {
                let proj = dot(&cols[j], &cols[k]);
                let (left, right) = cols.split_at_mut(j);
                for (x, &y) in right[0].iter_mut().zip(&left[k]) {
                    *x -= proj * y;
                }
            }
        }
        let norm = dot(&cols[j], &cols[j]).sqrt();
        if norm == T::zero() || norm <= original * T::epsilon() * T::lit(64.0) {
            return Err(GeomError::DegenerateInput(format!("column {j} is linearly dependent")));
        }
        for x in cols[j].iter_mut() {
            *x /= norm;
        }
    }
    Ok(Matrix::from_fn(p, n, |r, c| cols[c][r]))
}
