//! Dense and sparse linear algebra plus the reverse-mode tape used to train
//! every model in this crate.

mod cca;
mod dense;
pub mod linalg;
mod params;
mod sparse;
mod tape;

pub use cca::{cca_objective, CcaGradient};
pub use dense::{dense_affine, elementwise_mul, relu, sigmoid, softmax_rows, DenseMatrix};
pub use params::{adam_step, glorot_uniform, Adam, ParamId, ParamSet};
pub use sparse::{spmm, spmm_transposed, SparseMatrix};
pub use tape::{Tape, Var};
