//! Recorded-tape reverse-mode differentiation over a closed set of matrix
//! operations.
//!
//! A [`Tape`] records each operation together with its forward value. After
//! the forward pass ends in a `1 × 1` loss node, [`Tape::backward`] walks the
//! records in reverse and accumulates gradients into the [`ParamSet`] the
//! parameters were read from.

use std::sync::Arc;

use super::cca::cca_objective;
use super::dense::{add_row_bias, sigmoid_scalar, softmax_rows};
use super::sparse::{spmm, spmm_transposed};
use super::{DenseMatrix, ParamId, ParamSet, SparseMatrix};
use crate::error::{Error, Result};

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Mul(Var, Var),
    Highway {
        carry: Var,
        transform: Var,
        gate: Var,
    },
    Sum(Var),
    Square(Var),
    CrossEntropy {
        logits: Var,
        dlogits: DenseMatrix,
    },
    NegCorrelation {
        h1: Var,
        h2: Var,
        grad_h1: DenseMatrix,
        grad_h2: DenseMatrix,
    },
}

struct Node {
    value: DenseMatrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: DenseMatrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    /// `S · x` for a constant sparse `S`.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let value = spmm(s, self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::SpMM(Arc::clone(s), x), needs))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let mut value = self.value(x).clone();
        add_row_bias(&mut value, self.value(b))?;
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddBias(x, b), needs))
    }

    /// `x · w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid_scalar);
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid(x), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    /// Highway combination `transform ∘ gate + carry ∘ (1 − gate)`.
    pub fn highway(&mut self, carry: Var, transform: Var, gate: Var) -> Result<Var> {
        let (h, t, g) = (self.value(carry), self.value(transform), self.value(gate));
        h.check_same_shape(t, "highway")?;
        h.check_same_shape(g, "highway")?;
        let data = h
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .zip(g.as_slice())
            .map(|((&h, &t), &g)| t * g + h * (1.0 - g))
            .collect();
        let value = DenseMatrix::from_vec(h.rows(), h.cols(), data)?;
        let needs = self.needs(carry) || self.needs(transform) || self.needs(gate);
        Ok(self.push(
            value,
            Op::Highway {
                carry,
                transform,
                gate,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = DenseMatrix::filled(1, 1, self.value(x).sum());
        let needs = self.needs(x);
        self.push(value, Op::Sum(x), needs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let needs = self.needs(x);
        self.push(value, Op::Square(x), needs)
    }

    /// Mean softmax cross-entropy over the selected `rows`, each with the
    /// class index in `targets`. Rows not listed do not contribute.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        rows: &[usize],
        targets: &[usize],
    ) -> Result<Var> {
        if rows.len() != targets.len() {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} rows but {} targets", rows.len(), targets.len()),
            ));
        }
        if rows.is_empty() {
            return Err(Error::Argument("cross-entropy over zero rows".into()));
        }
        let z = self.value(logits);
        let c = z.cols();
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::dim(
                "cross_entropy",
                format!("target class {bad} with {c} logits"),
            ));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= z.rows()) {
            return Err(Error::dim(
                "cross_entropy",
                format!("row {bad} of {}", z.rows()),
            ));
        }
        let probs = softmax_rows(&z.select_rows(rows));
        let inv = 1.0 / rows.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = DenseMatrix::zeros(z.rows(), c);
        for (k, (&r, &t)) in rows.iter().zip(targets).enumerate() {
            let p = probs.row(k);
            loss -= p[t].max(f64::MIN_POSITIVE).ln();
            let d = dlogits.row_mut(r);
            for (dst, &pv) in d.iter_mut().zip(p) {
                *dst += pv * inv;
            }
            d[t] -= inv;
        }
        let value = DenseMatrix::filled(1, 1, loss * inv);
        let needs = self.needs(logits);
        Ok(self.push(value, Op::CrossEntropy { logits, dlogits }, needs))
    }

    /// Negative total canonical correlation between `h1` and `h2`.
    pub fn neg_correlation(&mut self, h1: Var, h2: Var, reg: f64) -> Result<Var> {
        let cca = cca_objective(self.value(h1), self.value(h2), reg)?;
        let value = DenseMatrix::filled(1, 1, -cca.correlation);
        let needs = self.needs(h1) || self.needs(h2);
        Ok(self.push(
            value,
            Op::NegCorrelation {
                h1,
                h2,
                grad_h1: cca.grad_h1,
                grad_h2: cca.grad_h2,
            },
            needs,
        ))
    }

    /// Back-propagates from the scalar `root`, overwriting every gradient
    /// slot of `params`. Parameters that `root` does not depend on end up
    /// with zero gradient.
    pub fn backward(&self, root: Var, params: &mut ParamSet) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward op".into()));
        }
        if root.0 >= self.nodes.len() {
            return Err(Error::State(format!("node {} not on this tape", root.0)));
        }
        if self.value(root).shape() != (1, 1) {
            return Err(Error::State(format!(
                "backward needs a scalar root, found {:?}",
                self.value(root).shape()
            )));
        }
        params.zero_grads();

        let mut grads: Vec<Option<DenseMatrix>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        fn acc(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => params.grad_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.matmul_nt(self.value(*b))?);
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, self.value(*a).matmul_tn(&g)?);
                    }
                }
                Op::SpMM(s, x) => acc(&mut grads, *x, spmm_transposed(s, &g)?),
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        acc(&mut grads, *b, g.column_sums());
                    }
                    if self.needs(*x) {
                        acc(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Relu(x) => {
                    let dx =
                        g.zip_map(self.value(*x), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?;
                    acc(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = g.zip_map(&node.value, "sigmoid", |g, y| g * y * (1.0 - y))?;
                    acc(&mut grads, *x, dx);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        acc(
                            &mut grads,
                            *a,
                            g.zip_map(self.value(*b), "mul", |g, y| g * y)?,
                        );
                    }
                    if self.needs(*b) {
                        acc(
                            &mut grads,
                            *b,
                            g.zip_map(self.value(*a), "mul", |g, x| g * x)?,
                        );
                    }
                }
                Op::Highway {
                    carry,
                    transform,
                    gate,
                } => {
                    let gv = self.value(*gate);
                    if self.needs(*transform) {
                        acc(
                            &mut grads,
                            *transform,
                            g.zip_map(gv, "highway", |g, t| g * t)?,
                        );
                    }
                    if self.needs(*carry) {
                        acc(
                            &mut grads,
                            *carry,
                            g.zip_map(gv, "highway", |g, t| g * (1.0 - t))?,
                        );
                    }
                    if self.needs(*gate) {
                        let diff = self.value(*transform).zip_map(
                            self.value(*carry),
                            "highway",
                            |n, h| n - h,
                        )?;
                        acc(
                            &mut grads,
                            *gate,
                            g.zip_map(&diff, "highway", |g, d| g * d)?,
                        );
                    }
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    acc(&mut grads, *x, DenseMatrix::filled(r, c, g.get(0, 0)));
                }
                Op::Square(x) => {
                    let dx = g.zip_map(self.value(*x), "square", |g, x| 2.0 * x * g)?;
                    acc(&mut grads, *x, dx);
                }
                Op::CrossEntropy { logits, dlogits } => {
                    let mut d = dlogits.clone();
                    d.scale(g.get(0, 0));
                    acc(&mut grads, *logits, d);
                }
                Op::NegCorrelation {
                    h1,
                    h2,
                    grad_h1,
                    grad_h2,
                } => {
                    let k = -g.get(0, 0);
                    if self.needs(*h1) {
                        let mut d = grad_h1.clone();
                        d.scale(k);
                        acc(&mut grads, *h1, d);
                    }
                    if self.needs(*h2) {
                        let mut d = grad_h2.clone();
                        d.scale(k);
                        acc(&mut grads, *h2, d);
                    }
                }
            }
        }
        Ok(())
    }
}
