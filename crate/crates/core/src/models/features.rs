use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::tensor::{DenseMatrix, SparseMatrix, Tape, Var};

/// Constant model input, either sparse (text, graph rows) or dense
/// (learned projections).
#[derive(Clone, Debug)]
pub enum Features {
    Sparse(Arc<SparseMatrix>),
    Dense(Arc<DenseMatrix>),
}

impl Features {
    pub fn rows(&self) -> usize {
        match self {
            Features::Sparse(s) => s.rows(),
            Features::Dense(d) => d.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Features::Sparse(s) => s.cols(),
            Features::Dense(d) => d.cols(),
        }
    }

    /// Records `self · w`.
    pub(crate) fn project(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        match self {
            Features::Sparse(s) => tape.spmm(s, w),
            Features::Dense(d) => {
                let x = tape.constant(DenseMatrix::clone(d));
                tape.matmul(x, w)
            }
        }
    }

    pub(crate) fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Features {
        if p <= 0.0 {
            return self.clone();
        }
        match self {
            Features::Sparse(s) => Features::Sparse(Arc::new(s.dropout(p, rng))),
            Features::Dense(d) => Features::Dense(Arc::new(dropout_dense(d, p, rng))),
        }
    }
}

impl From<SparseMatrix> for Features {
    fn from(s: SparseMatrix) -> Self {
        Features::Sparse(Arc::new(s))
    }
}

impl From<Arc<SparseMatrix>> for Features {
    fn from(s: Arc<SparseMatrix>) -> Self {
        Features::Sparse(s)
    }
}

impl From<DenseMatrix> for Features {
    fn from(d: DenseMatrix) -> Self {
        Features::Dense(Arc::new(d))
    }
}

/// Inverted-dropout keep mask scaled by `1/(1-p)`.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    p: f64,
    rng: &mut R,
) -> DenseMatrix {
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 })
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized by construction")
}

fn dropout_dense<R: Rng + ?Sized>(d: &DenseMatrix, p: f64, rng: &mut R) -> DenseMatrix {
    let mask = dropout_mask(d.rows(), d.cols(), p, rng);
    d.zip_map(&mask, "dropout", |a, b| a * b)
        .expect("same shape")
}

/// Applies dropout to a recorded activation when `rng` is present.
pub(crate) fn dropout_var<R: Rng + ?Sized>(
    tape: &mut Tape,
    h: Var,
    p: f64,
    rng: Option<&mut R>,
) -> Result<Var> {
    match rng {
        Some(rng) if p > 0.0 => {
            let (r, c) = tape.value(h).shape();
            let mask = tape.constant(dropout_mask(r, c, p, rng));
            tape.mul(h, mask)
        }
        _ => Ok(h),
    }
}
