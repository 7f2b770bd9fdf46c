//! Total canonical correlation between two projected views and its
//! analytic gradient.
//!
//! With centred outputs `H̄1 (n×k1)`, `H̄2 (n×k2)`:
//!
//! ```text
//! Σ11 = H̄1ᵀH̄1/(n-1) + r·I     Σ22 = H̄2ᵀH̄2/(n-1) + r·I     Σ12 = H̄1ᵀH̄2/(n-1)
//! T   = Σ11^{-1/2} Σ12 Σ22^{-1/2} = U·D·Vᵀ
//! corr = trace(D)
//! ```
//!
//! The gradient uses `∂corr/∂Σ12 = Σ11^{-1/2} U Vᵀ Σ22^{-1/2}` and
//! `∂corr/∂Σ11 = -½ Σ11^{-1/2} U D Uᵀ Σ11^{-1/2}` (symmetrically for Σ22).

use super::linalg::{inverse_sqrt_spd, svd};
use super::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct CcaGradient {
    /// Sum of all canonical correlations.
    pub correlation: f64,
    /// Individual canonical correlations, descending.
    pub correlations: Vec<f64>,
    /// `∂correlation/∂H1`.
    pub grad_h1: DenseMatrix,
    /// `∂correlation/∂H2`.
    pub grad_h2: DenseMatrix,
}

fn centre(h: &DenseMatrix) -> DenseMatrix {
    let n = h.rows() as f64;
    let mut means = h.column_sums();
    means.scale(1.0 / n);
    let mut out = h.clone();
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(means.as_slice()) {
            *v -= m;
        }
    }
    out
}

fn add_ridge(m: &mut DenseMatrix, reg: f64) {
    for i in 0..m.rows() {
        m.set(i, i, m.get(i, i) + reg);
    }
}

pub fn cca_objective(h1: &DenseMatrix, h2: &DenseMatrix, reg: f64) -> Result<CcaGradient> {
    let n = h1.rows();
    if h2.rows() != n {
        return Err(Error::dim(
            "cca",
            format!("{} rows vs {} rows", n, h2.rows()),
        ));
    }
    let k = h1.cols().max(h2.cols());
    if n <= k {
        return Err(Error::Rank(format!(
            "{n} samples cannot support {k}-dimensional projections"
        )));
    }
    if !(reg >= 0.0) {
        return Err(Error::Argument(format!("cca regulariser {reg} < 0")));
    }
    let scale = 1.0 / (n as f64 - 1.0);
    let c1 = centre(h1);
    let c2 = centre(h2);

    let mut s11 = c1.matmul_tn(&c1)?;
    s11.scale(scale);
    add_ridge(&mut s11, reg);
    let mut s22 = c2.matmul_tn(&c2)?;
    s22.scale(scale);
    add_ridge(&mut s22, reg);
    let mut s12 = c1.matmul_tn(&c2)?;
    s12.scale(scale);
    if !(s11.is_finite() && s22.is_finite() && s12.is_finite()) {
        return Err(Error::Numeric("non-finite covariance".into()));
    }

    let r11 = inverse_sqrt_spd(&s11)?;
    let r22 = inverse_sqrt_spd(&s22)?;
    let t = r11.matmul(&s12)?.matmul(&r22)?;
    let dec = svd(&t)?;
    let correlation: f64 = dec.singular_values.iter().sum();

    // ∇12 = Σ11^{-1/2} U Vᵀ Σ22^{-1/2}
    let uvt = dec.u.matmul_nt(&dec.v)?;
    let d12 = r11.matmul(&uvt)?.matmul(&r22)?;

    let scaled_outer = |basis: &DenseMatrix| -> Result<DenseMatrix> {
        let mut bd = basis.clone();
        for j in 0..dec.singular_values.len() {
            for r in 0..bd.rows() {
                bd.set(r, j, bd.get(r, j) * dec.singular_values[j]);
            }
        }
        bd.matmul_nt(basis)
    };
    let mut d11 = r11.matmul(&scaled_outer(&dec.u)?)?.matmul(&r11)?;
    d11.scale(-0.5);
    let mut d22 = r22.matmul(&scaled_outer(&dec.v)?)?.matmul(&r22)?;
    d22.scale(-0.5);

    // ∂corr/∂H̄1 = (2 H̄1 ∇11 + H̄2 ∇12ᵀ)/(n-1); centring is already absorbed
    // because both terms have zero column means.
    let mut g1 = c1.matmul(&d11)?;
    g1.scale(2.0);
    g1.add_assign(&c2.matmul_nt(&d12)?);
    g1.scale(scale);
    let mut g2 = c2.matmul(&d22)?;
    g2.scale(2.0);
    g2.add_assign(&c1.matmul(&d12)?);
    g2.scale(scale);

    if !correlation.is_finite() {
        return Err(Error::Numeric("non-finite correlation".into()));
    }
    Ok(CcaGradient {
        correlation,
        correlations: dec.singular_values,
        grad_h1: g1,
        grad_h2: g2,
    })
}
