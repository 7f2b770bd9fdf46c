//! Small dense decompositions used by the CCA objective.
//!
//! Both routines are Jacobi methods: slow for large matrices but accurate to
//! working precision, which the CCA gradient needs.

use super::DenseMatrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of the second matrix.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim("symmetric_eigen", format!("{:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::Numeric("non-finite input to eigensolver".into()));
    }
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, dst, v.get(k, src));
        }
    }
    Ok((values, vectors))
}

/// `A^{-1/2}` for a symmetric positive-definite `A`.
pub fn inverse_sqrt_spd(a: &DenseMatrix) -> Result<DenseMatrix> {
    let (vals, vecs) = symmetric_eigen(a)?;
    if let Some(&min) = vals.last() {
        if min <= 0.0 {
            return Err(Error::Rank(format!(
                "covariance not positive definite (smallest eigenvalue {min:e})"
            )));
        }
    }
    let n = a.rows();
    let mut scaled = vecs.clone();
    for (j, &lam) in vals.iter().enumerate() {
        let f = lam.powf(-0.5);
        for k in 0..n {
            scaled.set(k, j, scaled.get(k, j) * f);
        }
    }
    scaled.matmul_nt(&vecs)
}

/// Thin singular value decomposition `A = U·diag(s)·Vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

/// One-sided (Hestenes) Jacobi SVD. Singular values come out descending.
pub fn svd(a: &DenseMatrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Numeric("non-finite input to SVD".into()));
    }
    if a.rows() < a.cols() {
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    let (m, n) = a.shape();
    // Work on columns: keep Aᵀ so that each column is a contiguous row.
    let mut cols = a.transpose();
    let mut v = DenseMatrix::identity(n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for (x, y) in cols.row(p).iter().zip(cols.row(q)) {
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let (xp, xq) = (cols.get(p, k), cols.get(q, k));
                    cols.set(p, k, c * xp - s * xq);
                    cols.set(q, k, s * xp + c * xq);
                }
                for k in 0..n {
                    let (vp, vq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vp - s * vq);
                    v.set(k, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| cols.row(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u = DenseMatrix::zeros(m, n);
    let mut v_sorted = DenseMatrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        singular_values.push(sigma);
        if sigma > 0.0 {
            for k in 0..m {
                u.set(k, dst, cols.get(src, k) / sigma);
            }
        }
        for k in 0..n {
            v_sorted.set(k, dst, v.get(k, src));
        }
    }
    Ok(Svd {
        u,
        singular_values,
        v: v_sorted,
    })
}
