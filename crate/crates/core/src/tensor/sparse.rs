use rand::Rng;
use rayon::prelude::*;

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Compressed-row sparse matrix.
///
/// Column indices inside a row are strictly increasing, no explicit zeros
/// are stored and all values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are
    /// summed; entries that end up zero are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &t {
            if r >= rows || c >= cols {
                return Err(Error::dim(
                    "from_triplets",
                    format!("entry ({r}, {c}) outside {rows}x{cols}"),
                ));
            }
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite entry at ({r}, {c})")));
            }
        }
        // Stable sort keeps duplicate summation order equal to insertion order.
        t.sort_by_key(|&(r, c, _)| (r, c));

        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut i = 0;
        while i < t.len() {
            let (r, c, mut v) = t[i];
            i += 1;
            while i < t.len() && t[i].0 == r && t[i].1 == c {
                v += t[i].2;
                i += 1;
            }
            if v != 0.0 {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut indptr = Vec::with_capacity(d.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..d.rows() {
            for (c, &v) in d.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: d.rows(),
            cols: d.cols(),
            indptr,
            indices,
            values,
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

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `r`, in column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            d.set(r, c, v);
        }
        d
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let k = next[c];
            indices[k] = r;
            values[k] = v;
            next[c] += 1;
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
        }
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dim(
                "hstack",
                format!("{} rows vs {} rows", self.rows, other.rows),
            ));
        }
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        indptr.push(0);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                indices.push(c);
                values.push(v);
            }
            for (c, v) in other.row(r) {
                indices.push(self.cols + c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols + other.cols,
            indptr,
            indices,
            values,
        })
    }

    /// Inverted dropout over stored entries: each is zeroed with
    /// probability `p`, survivors are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Self {
        if p <= 0.0 {
            return self.clone();
        }
        let keep = 1.0 / (1.0 - p);
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                if rng.random::<f64>() >= p {
                    indices.push(c);
                    values.push(v * keep);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.iter().all(|(r, c, v)| self.get(c, r) == v)
    }
}

/// Sparse-dense product `S · D`.
pub fn spmm(s: &SparseMatrix, d: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols != d.rows() {
        return Err(Error::dim(
            "spmm",
            format!("{:?} x {:?}", s.shape(), d.shape()),
        ));
    }
    let m = d.cols();
    let mut out = DenseMatrix::zeros(s.rows, m);
    if m == 0 {
        return Ok(out);
    }
    let kernel = |(r, out_row): (usize, &mut [f64])| {
        for (c, v) in s.row(r) {
            for (o, &x) in out_row.iter_mut().zip(d.row(c)) {
                *o += v * x;
            }
        }
    };
    if s.nnz() * m >= 1 << 16 {
        out.as_mut_slice()
            .par_chunks_mut(m)
            .enumerate()
            .for_each(kernel);
    } else {
        out.as_mut_slice()
            .chunks_mut(m)
            .enumerate()
            .for_each(kernel);
    }
    Ok(out)
}

/// `Sᵀ · D` without building the transpose.
pub fn spmm_transposed(s: &SparseMatrix, d: &DenseMatrix) -> Result<DenseMatrix> {
    if s.rows != d.rows() {
        return Err(Error::dim(
            "spmm_transposed",
            format!("{:?}ᵀ x {:?}", s.shape(), d.shape()),
        ));
    }
    let m = d.cols();
    let mut out = DenseMatrix::zeros(s.cols, m);
    for r in 0..s.rows {
        let src = d.row(r);
        for (c, v) in s.row(r) {
            for (o, &x) in out.row_mut(c).iter_mut().zip(src) {
                *o += v * x;
            }
        }
    }
    Ok(out)
}
