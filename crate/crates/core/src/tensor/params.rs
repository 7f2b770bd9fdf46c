use rand::Rng;

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Handle into a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors with gradient slots and Adam moment buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<DenseMatrix>,
    grads: Vec<DenseMatrix>,
    first_moment: Vec<DenseMatrix>,
    second_moment: Vec<DenseMatrix>,
    step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter name {name}");
        let (r, c) = value.shape();
        self.names.push(name);
        self.values.push(value);
        self.grads.push(DenseMatrix::zeros(r, c));
        self.first_moment.push(DenseMatrix::zeros(r, c));
        self.second_moment.push(DenseMatrix::zeros(r, c));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &DenseMatrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &DenseMatrix {
        &self.grads[id.0]
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.grads[id.0]
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replaces parameter values by name, e.g. when loading a checkpoint.
    pub fn load_values<'a>(
        &mut self,
        tensors: impl IntoIterator<Item = (&'a str, &'a DenseMatrix)>,
    ) -> Result<()> {
        for (name, value) in tensors {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
            if self.values[id.0].shape() != value.shape() {
                return Err(Error::Format(format!(
                    "parameter {name}: expected {:?}, found {:?}",
                    self.values[id.0].shape(),
                    value.shape()
                )));
            }
            self.values[id.0] = value.clone();
        }
        Ok(())
    }

    /// Copies values (not optimizer state) from a set with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamSet) {
        assert_eq!(self.names, other.names, "parameter layout differs");
        self.values.clone_from(&other.values);
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn step(&self, params: &mut ParamSet) {
        params.step += 1;
        let t = params.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.values.len() {
            let g = params.grads[i].as_slice();
            let m = params.first_moment[i].as_mut_slice();
            let v = params.second_moment[i].as_mut_slice();
            let w = params.values[i].as_mut_slice();
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                w[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// `adam_step(params, lr)` with the default moment coefficients.
pub fn adam_step(params: &mut ParamSet, lr: f64) {
    Adam::with_lr(lr).step(params);
}

/// Uniform Glorot initialisation for a `fan_in × fan_out` weight.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    DenseMatrix::from_vec(fan_in, fan_out, data).expect("sized by construction")
}
