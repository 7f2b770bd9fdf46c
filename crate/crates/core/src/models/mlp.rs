use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::dropout_var;
use super::gcn::dropout_stream;
use super::train::{fit, TrainTrace};
use super::{DevMonitor, Features, Partition, TrainOptions};
use crate::error::{Error, Result};
use crate::tensor::{
    glorot_uniform, softmax_rows, DenseMatrix, ParamId, ParamSet, SparseMatrix, Tape, Var,
};
use crate::views::ViewMatrices;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_size: usize,
    pub dropout: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_size: 300,
            dropout: 0.5,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::Argument("hidden size must be ≥ 1".into()));
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

/// `[X | Â]`: each user's text row followed by their normalised adjacency
/// row.
pub fn mlp_input(x: &SparseMatrix, a_hat: &SparseMatrix) -> Result<SparseMatrix> {
    if a_hat.rows() != a_hat.cols() {
        return Err(Error::dim("mlp_input", format!("Â is {:?}", a_hat.shape())));
    }
    x.hstack(a_hat)
}

/// One relu hidden layer followed by a softmax layer.
#[derive(Clone, Debug)]
pub struct MlpModel {
    config: MlpConfig,
    input_dim: usize,
    num_classes: usize,
    params: ParamSet,
    hidden: (ParamId, ParamId),
    out: (ParamId, ParamId),
}

impl MlpModel {
    pub fn new(input_dim: usize, num_classes: usize, config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_classes == 0 || input_dim == 0 {
            return Err(Error::Argument("model needs inputs and classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = config.hidden_size;
        let hidden = (
            params.add("hidden.w", glorot_uniform(input_dim, h, &mut rng)),
            params.add("hidden.b", DenseMatrix::zeros(1, h)),
        );
        let out = (
            params.add("out.w", glorot_uniform(h, num_classes, &mut rng)),
            params.add("out.b", DenseMatrix::zeros(1, num_classes)),
        );
        Ok(Self {
            config,
            input_dim,
            num_classes,
            params,
            hidden,
            out,
        })
    }

    pub fn config(&self) -> &MlpConfig {
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

    pub(crate) fn record(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        input: &Features,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if input.cols() != self.input_dim {
            return Err(Error::dim(
                "mlp",
                format!(
                    "{} input columns, model expects {}",
                    input.cols(),
                    self.input_dim
                ),
            ));
        }
        let p = self.config.dropout;
        let input = match rng.as_deref_mut() {
            Some(r) => input.dropout(p, r),
            None => input.clone(),
        };
        let w = tape.param(params, self.hidden.0);
        let b = tape.param(params, self.hidden.1);
        let xw = input.project(tape, w)?;
        let pre = tape.add_bias(xw, b)?;
        let h = tape.relu(pre);
        let h = dropout_var(tape, h, p, rng)?;
        let w = tape.param(params, self.out.0);
        let b = tape.param(params, self.out.1);
        tape.affine(h, w, b)
    }

    pub fn logits(&self, input: &Features) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let z = self.record(&self.params, &mut tape, input, None)?;
        Ok(tape.value(z).clone())
    }

    pub fn predict_proba(&self, input: &Features) -> Result<DenseMatrix> {
        Ok(softmax_rows(&self.logits(input)?))
    }

    /// Labelled cross-entropy without dropout; fills the parameter
    /// gradients.
    pub fn loss_and_grad(&mut self, input: &Features, partition: &Partition) -> Result<f64> {
        let mut tape = Tape::new();
        let z = self.record(&self.params, &mut tape, input, None)?;
        let loss = tape.softmax_cross_entropy(z, partition.labeled(), partition.labels())?;
        tape.backward(loss, &mut self.params)?;
        Ok(tape.value(loss).get(0, 0))
    }

    pub fn fit(
        &mut self,
        input: &Features,
        partition: &Partition,
        opts: &TrainOptions,
        monitor: Option<&DevMonitor<'_>>,
    ) -> Result<TrainTrace> {
        partition.require_classes()?;
        if partition.num_classes() != self.num_classes {
            return Err(Error::dim(
                "mlp",
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
            |p, tape, r| self.record(p, tape, input, r),
        );
        self.params = params;
        result
    }
}

/// Trains the text+network MLP on `[X | Â]`.
pub fn train_mlp(
    views: &ViewMatrices,
    partition: &Partition,
    config: MlpConfig,
    opts: &TrainOptions,
    monitor: Option<&DevMonitor<'_>>,
) -> Result<(MlpModel, TrainTrace)> {
    partition.require_classes()?;
    let input = Features::Sparse(Arc::new(mlp_input(&views.x, &views.a_hat)?));
    let mut model = MlpModel::new(input.cols(), partition.num_classes(), config, opts.seed)?;
    let trace = model.fit(&input, partition, opts, monitor)?;
    Ok((model, trace))
}
