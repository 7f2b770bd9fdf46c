use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::dropout_var;
use super::train::{fit, TrainTrace};
use super::{DevMonitor, Features, Partition, TrainOptions};
use crate::error::{Error, Result};
use crate::tensor::{
    dense_affine, glorot_uniform, sigmoid, softmax_rows, DenseMatrix, ParamId, ParamSet,
    SparseMatrix, Tape, Var,
};
use crate::views::ViewMatrices;

/// Initial transform-gate bias; negative values favour carrying the input.
pub const GATE_BIAS_INIT: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnConfig {
    /// Width shared by every hidden layer.
    pub hidden_size: usize,
    /// Hidden graph-conv layers; the softmax layer adds one more.
    pub num_hidden_layers: usize,
    pub use_highway: bool,
    pub dropout: f64,
    /// Self-loop weight used to build `Â`.
    pub lambda: f64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            hidden_size: 300,
            num_hidden_layers: 3,
            use_highway: true,
            dropout: 0.5,
            lambda: 1.0,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::Argument("hidden size must be ≥ 1".into()));
        }
        if self.num_hidden_layers == 0 {
            return Err(Error::Argument("need at least one hidden layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Square transform gate `T(h) = σ(h·W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HighwayGate {
    pub w: DenseMatrix,
    pub b: DenseMatrix,
}

impl HighwayGate {
    pub fn new(w: DenseMatrix, b: DenseMatrix) -> Result<Self> {
        if w.rows() != w.cols() || b.shape() != (1, w.cols()) {
            return Err(Error::dim(
                "highway gate",
                format!("W {:?}, b {:?}", w.shape(), b.shape()),
            ));
        }
        Ok(Self { w, b })
    }

    pub fn width(&self) -> usize {
        self.w.cols()
    }

    pub fn transform(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(sigmoid(&dense_affine(h, &self.w, &self.b)?))
    }
}

/// `h_new ∘ T(h_in) + h_in ∘ (1 − T(h_in))`.
pub fn highway_combine(
    h_in: &DenseMatrix,
    h_new: &DenseMatrix,
    gate: &HighwayGate,
) -> Result<DenseMatrix> {
    h_in.check_same_shape(h_new, "highway_combine")?;
    if h_in.cols() != gate.width() {
        return Err(Error::dim(
            "highway_combine",
            format!("layer width {} vs gate width {}", h_in.cols(), gate.width()),
        ));
    }
    let t = gate.transform(h_in)?;
    let data = h_in
        .as_slice()
        .iter()
        .zip(h_new.as_slice())
        .zip(t.as_slice())
        .map(|((&h, &n), &t)| n * t + h * (1.0 - t))
        .collect();
    DenseMatrix::from_vec(h_in.rows(), h_in.cols(), data)
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

/// Stack of graph convolutions: one ungated input layer, `L − 1` hidden
/// layers (optionally highway-gated) and a graph-conv softmax layer.
#[derive(Clone, Debug)]
pub struct GcnModel {
    config: GcnConfig,
    input_dim: usize,
    num_classes: usize,
    params: ParamSet,
    conv: Vec<Layer>,
    gates: Vec<Option<Layer>>,
}

impl GcnModel {
    pub fn new(input_dim: usize, num_classes: usize, config: GcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_classes == 0 || input_dim == 0 {
            return Err(Error::Argument("model needs inputs and classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = config.hidden_size;
        let mut conv = Vec::new();
        let mut gates = Vec::new();
        for l in 0..=config.num_hidden_layers {
            let fan_in = if l == 0 { input_dim } else { h };
            let fan_out = if l == config.num_hidden_layers {
                num_classes
            } else {
                h
            };
            let name = if l == config.num_hidden_layers {
                "out".to_string()
            } else {
                format!("conv{l}")
            };
            conv.push(Layer {
                w: params.add(
                    format!("{name}.w"),
                    glorot_uniform(fan_in, fan_out, &mut rng),
                ),
                b: params.add(format!("{name}.b"), DenseMatrix::zeros(1, fan_out)),
            });
            let gated = config.use_highway && l > 0 && l < config.num_hidden_layers;
            gates.push(gated.then(|| Layer {
                w: params.add(format!("gate{l}.w"), glorot_uniform(h, h, &mut rng)),
                b: params.add(
                    format!("gate{l}.b"),
                    DenseMatrix::filled(1, h, GATE_BIAS_INIT),
                ),
            }));
        }
        Ok(Self {
            config,
            input_dim,
            num_classes,
            params,
            conv,
            gates,
        })
    }

    pub fn config(&self) -> &GcnConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Number of graph-conv transforms (hidden layers + softmax layer).
    pub fn num_convolutions(&self) -> usize {
        self.conv.len()
    }

    /// Gate of hidden layer `l`, if that layer is gated.
    pub fn gate(&self, l: usize) -> Option<HighwayGate> {
        self.gates.get(l).copied().flatten().map(|g| HighwayGate {
            w: self.params.value(g.w).clone(),
            b: self.params.value(g.b).clone(),
        })
    }

    /// Gate parameter ids as `(w, b)` for every gated layer.
    pub fn gate_params(&self) -> Vec<(ParamId, ParamId)> {
        self.gates.iter().flatten().map(|g| (g.w, g.b)).collect()
    }

    /// Parameter ids `(w, b)` of every graph-conv transform, input first.
    pub fn conv_params(&self) -> Vec<(ParamId, ParamId)> {
        self.conv.iter().map(|l| (l.w, l.b)).collect()
    }

    fn check_inputs(&self, features: &Features, a_hat: &SparseMatrix) -> Result<()> {
        if features.cols() != self.input_dim {
            return Err(Error::dim(
                "gcn",
                format!(
                    "{} input features, model expects {}",
                    features.cols(),
                    self.input_dim
                ),
            ));
        }
        if a_hat.rows() != a_hat.cols() || a_hat.rows() != features.rows() {
            return Err(Error::dim(
                "gcn",
                format!("Â {:?} for {} users", a_hat.shape(), features.rows()),
            ));
        }
        Ok(())
    }

    /// Records the forward pass and returns `|U| × c` logits.
    pub(crate) fn record(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        features: &Features,
        a_hat: &Arc<SparseMatrix>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.check_inputs(features, a_hat)?;
        let p = self.config.dropout;
        let input = match rng.as_deref_mut() {
            Some(r) => features.dropout(p, r),
            None => features.clone(),
        };
        let first = self.conv[0];
        let w = tape.param(params, first.w);
        let xw = input.project(tape, w)?;
        let agg = tape.spmm(a_hat, xw)?;
        let b = tape.param(params, first.b);
        let pre = tape.add_bias(agg, b)?;
        let mut h = tape.relu(pre);

        let last = self.conv.len() - 1;
        for l in 1..=last {
            let layer = self.conv[l];
            let dropped = dropout_var(tape, h, p, rng.as_deref_mut())?;
            let w = tape.param(params, layer.w);
            let hw = tape.matmul(dropped, w)?;
            let agg = tape.spmm(a_hat, hw)?;
            let b = tape.param(params, layer.b);
            let pre = tape.add_bias(agg, b)?;
            if l == last {
                return Ok(pre);
            }
            let candidate = tape.relu(pre);
            h = match self.gates[l] {
                Some(g) => {
                    let gw = tape.param(params, g.w);
                    let gb = tape.param(params, g.b);
                    let z = tape.affine(h, gw, gb)?;
                    let t = tape.sigmoid(z);
                    tape.highway(h, candidate, t)?
                }
                None => candidate,
            };
        }
        unreachable!("the output layer returns inside the loop")
    }

    pub fn logits(&self, features: &Features, a_hat: &Arc<SparseMatrix>) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let z = self.record(&self.params, &mut tape, features, a_hat, None)?;
        Ok(tape.value(z).clone())
    }

    pub fn predict_proba(
        &self,
        features: &Features,
        a_hat: &Arc<SparseMatrix>,
    ) -> Result<DenseMatrix> {
        Ok(softmax_rows(&self.logits(features, a_hat)?))
    }

    /// Labelled cross-entropy without dropout; fills the parameter
    /// gradients.
    pub fn loss_and_grad(
        &mut self,
        features: &Features,
        a_hat: &Arc<SparseMatrix>,
        partition: &Partition,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let z = self.record(&self.params, &mut tape, features, a_hat, None)?;
        let loss = tape.softmax_cross_entropy(z, partition.labeled(), partition.labels())?;
        tape.backward(loss, &mut self.params)?;
        Ok(tape.value(loss).get(0, 0))
    }

    pub fn fit(
        &mut self,
        features: &Features,
        a_hat: &Arc<SparseMatrix>,
        partition: &Partition,
        opts: &TrainOptions,
        monitor: Option<&DevMonitor<'_>>,
    ) -> Result<TrainTrace> {
        partition.require_classes()?;
        if partition.num_classes() != self.num_classes {
            return Err(Error::dim(
                "gcn",
                format!(
                    "{} classes, model has {}",
                    partition.num_classes(),
                    self.num_classes
                ),
            ));
        }
        let mut rng = dropout_stream(opts.seed);
        let mut params = std::mem::take(&mut self.params);
        let result = fit(
            &mut params,
            partition,
            opts,
            monitor,
            &mut rng,
            |p, tape, r| self.record(p, tape, features, a_hat, r),
        );
        self.params = params;
        result
    }
}

pub(crate) fn dropout_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Trains a highway GCN on the text view over `Â`.
pub fn train_gcn(
    views: &ViewMatrices,
    partition: &Partition,
    config: GcnConfig,
    opts: &TrainOptions,
    monitor: Option<&DevMonitor<'_>>,
) -> Result<(GcnModel, TrainTrace)> {
    partition.require_classes()?;
    let features = Features::Sparse(Arc::clone(&views.x));
    let mut model = GcnModel::new(features.cols(), partition.num_classes(), config, opts.seed)?;
    let trace = model.fit(&features, &views.a_hat, partition, opts, monitor)?;
    Ok((model, trace))
}
