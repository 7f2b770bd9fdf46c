use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

// Below this many multiply-adds a product stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub(crate) fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a = &self.data[i * k..(i + 1) * k];
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b = &other.data[p * m..(p + 1) * m];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += av * bv;
                }
            }
        };
        if m == 0 {
            return Ok(out);
        }
        if n * k * m >= PAR_THRESHOLD {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dim(
                "matmul_tn",
                format!("{:?}ᵀ x {:?}", self.shape(), other.shape()),
            ));
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        if m == 0 {
            return Ok(out);
        }
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            for p in 0..k {
                let av = self.data[p * n + i];
                if av == 0.0 {
                    continue;
                }
                let b = &other.data[p * m..(p + 1) * m];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += av * bv;
                }
            }
        };
        if n * k * m >= PAR_THRESHOLD {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::dim(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", self.shape(), other.shape()),
            ));
        }
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = Self::zeros(n, m);
        if m == 0 {
            return Ok(out);
        }
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a = &self.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b = &other.data[j * k..(j + 1) * k];
                *o = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        };
        if n * k * m >= PAR_THRESHOLD {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// Column sums as a `1 × cols` row vector.
    pub fn column_sums(&self) -> Self {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Self::row_vector(out)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dim(
                "hstack",
                format!("{} rows vs {} rows", self.rows, other.rows),
            ));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }
}

/// `X·W + b` with the `1 × W.cols` row vector `b` broadcast over rows.
pub fn dense_affine(x: &DenseMatrix, w: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = x.matmul(w)?;
    add_row_bias(&mut out, b)?;
    Ok(out)
}

pub(crate) fn add_row_bias(out: &mut DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if b.rows() != 1 || b.cols() != out.cols() {
        return Err(Error::dim(
            "bias",
            format!("bias {:?} for {} columns", b.shape(), out.cols()),
        ));
    }
    let cols = out.cols();
    for row in out.as_mut_slice().chunks_mut(cols.max(1)) {
        for (o, bv) in row.iter_mut().zip(b.as_slice()) {
            *o += bv;
        }
    }
    Ok(())
}

pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| v.max(0.0))
}

#[inline]
pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &DenseMatrix) -> DenseMatrix {
    x.map(sigmoid_scalar)
}

/// Row-wise softmax, max-shifted for stability.
pub fn softmax_rows(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    let cols = x.cols();
    if cols == 0 {
        return out;
    }
    for row in out.as_mut_slice().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub fn elementwise_mul(x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    x.zip_map(y, "elementwise_mul", |a, b| a * b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_hand_evaluation() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0]]);
        let w = DenseMatrix::from_rows(&[[1.0], [1.0]]);
        let b = DenseMatrix::row_vector(vec![1.0]);
        assert_eq!(dense_affine(&x, &w, &b).unwrap().as_slice(), &[4.0]);
    }

    #[test]
    fn affine_identity_and_zero_weight() {
        let x = DenseMatrix::from_rows(&[[1.5, -2.0], [0.25, 3.0], [7.0, 0.0]]);
        let id = DenseMatrix::identity(2);
        let zero_b = DenseMatrix::zeros(1, 2);
        assert_eq!(dense_affine(&x, &id, &zero_b).unwrap(), x);

        let c = DenseMatrix::row_vector(vec![0.5, -4.0]);
        let out = dense_affine(&x, &DenseMatrix::zeros(2, 2), &c).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), c.as_slice());
        }
    }

    #[test]
    fn affine_shape_errors() {
        let x = DenseMatrix::zeros(2, 3);
        let w = DenseMatrix::zeros(2, 2);
        assert!(matches!(
            dense_affine(&x, &w, &DenseMatrix::zeros(1, 2)),
            Err(Error::Dimension { .. })
        ));
        let w = DenseMatrix::zeros(3, 2);
        assert!(dense_affine(&x, &w, &DenseMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn activation_examples() {
        let u = softmax_rows(&DenseMatrix::filled(1, 5, 3.7));
        for &v in u.as_slice() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        assert_eq!(sigmoid(&DenseMatrix::zeros(1, 1)).as_slice(), &[0.5]);
        let r = relu(&DenseMatrix::row_vector(vec![-1.0, 2.0]));
        assert_eq!(r.as_slice(), &[0.0, 2.0]);
        assert!(elementwise_mul(&DenseMatrix::zeros(1, 2), &DenseMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        let s = sigmoid(&DenseMatrix::row_vector(vec![-800.0, 800.0]));
        assert!(s.is_finite());
        assert!(s.get(0, 0) >= 0.0 && s.get(0, 1) <= 1.0);
    }

    #[test]
    fn transposed_products_agree() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let b = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        assert_eq!(a.matmul_tn(&b).unwrap(), a.transpose().matmul(&b).unwrap());
        let c = DenseMatrix::from_rows(&[[1.0, -1.0, 2.0]]);
        assert_eq!(a.matmul_nt(&c).unwrap(), a.matmul(&c.transpose()).unwrap());
    }
}
