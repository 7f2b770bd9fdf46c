use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::TrainTrace;
use super::{DevMonitor, Features, MlpConfig, MlpModel, Partition, TrainOptions};
use crate::error::{Error, Result};
use crate::tensor::{
    cca_objective, glorot_uniform, Adam, DenseMatrix, ParamId, ParamSet, SparseMatrix, Tape, Var,
};
use crate::views::ViewMatrices;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DccaConfig {
    /// Sigmoid hidden width of each view network.
    pub proj_hidden: usize,
    /// Output width `k` of each view network.
    pub proj_out: usize,
    /// Ridge added to both view covariances.
    pub cca_reg: f64,
    /// Hidden width of the downstream classifier.
    pub supervised_hidden: usize,
    /// Drop the hidden layer so each view network is a single affine map.
    pub linear: bool,
    pub cca_epochs: usize,
    pub cca_lr: f64,
    /// Classifier dropout.
    pub dropout: f64,
}

impl Default for DccaConfig {
    fn default() -> Self {
        Self {
            proj_hidden: 1000,
            proj_out: 500,
            cca_reg: 1e-4,
            supervised_hidden: 300,
            linear: false,
            cca_epochs: 100,
            cca_lr: 1e-3,
            dropout: 0.5,
        }
    }
}

impl DccaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proj_out == 0 || self.supervised_hidden == 0 {
            return Err(Error::Argument("layer sizes must be ≥ 1".into()));
        }
        if !self.linear && self.proj_out > self.proj_hidden {
            return Err(Error::Argument(format!(
                "projection output {} wider than hidden layer {}",
                self.proj_out, self.proj_hidden
            )));
        }
        if !(self.cca_reg > 0.0) {
            return Err(Error::Argument(format!(
                "cca_reg must be > 0, got {}",
                self.cca_reg
            )));
        }
        if !(self.cca_lr > 0.0) {
            return Err(Error::Argument(format!(
                "cca_lr must be > 0, got {}",
                self.cca_lr
            )));
        }
        Ok(())
    }
}

/// Negative total canonical correlation between two projections.
pub fn cca_loss(h1: &DenseMatrix, h2: &DenseMatrix, reg: f64) -> Result<f64> {
    Ok(-cca_objective(h1, h2, reg)?.correlation)
}

#[derive(Clone, Copy, Debug)]
struct ViewNet {
    hidden: Option<(ParamId, ParamId)>,
    out: (ParamId, ParamId),
}

/// The two view networks trained to maximise cross-view correlation.
#[derive(Clone, Debug)]
pub struct ProjectionNets {
    config: DccaConfig,
    input_dims: (usize, usize),
    params: ParamSet,
    nets: [ViewNet; 2],
}

impl ProjectionNets {
    pub fn new(input_dims: (usize, usize), config: DccaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if input_dims.0 == 0 || input_dims.1 == 0 {
            return Err(Error::Argument(
                "both views need at least one column".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut build = |view: usize, fan_in: usize| {
            let k = config.proj_out;
            if config.linear {
                return ViewNet {
                    hidden: None,
                    out: (
                        params.add(
                            format!("view{view}.out.w"),
                            glorot_uniform(fan_in, k, &mut rng),
                        ),
                        params.add(format!("view{view}.out.b"), DenseMatrix::zeros(1, k)),
                    ),
                };
            }
            let h = config.proj_hidden;
            ViewNet {
                hidden: Some((
                    params.add(
                        format!("view{view}.hidden.w"),
                        glorot_uniform(fan_in, h, &mut rng),
                    ),
                    params.add(format!("view{view}.hidden.b"), DenseMatrix::zeros(1, h)),
                )),
                out: (
                    params.add(format!("view{view}.out.w"), glorot_uniform(h, k, &mut rng)),
                    params.add(format!("view{view}.out.b"), DenseMatrix::zeros(1, k)),
                ),
            }
        };
        let nets = [build(1, input_dims.0), build(2, input_dims.1)];
        Ok(Self {
            config,
            input_dims,
            params,
            nets,
        })
    }

    pub fn config(&self) -> &DccaConfig {
        &self.config
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn record_view(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        view: usize,
        x: &Features,
    ) -> Result<Var> {
        let expected = if view == 0 {
            self.input_dims.0
        } else {
            self.input_dims.1
        };
        if x.cols() != expected {
            return Err(Error::dim(
                "dcca",
                format!(
                    "view {} has {} columns, expected {expected}",
                    view + 1,
                    x.cols()
                ),
            ));
        }
        let net = self.nets[view];
        let (w, b) = net.out;
        let w = tape.param(params, w);
        let b = tape.param(params, b);
        match net.hidden {
            None => {
                let xw = x.project(tape, w)?;
                tape.add_bias(xw, b)
            }
            Some((hw, hb)) => {
                let hw = tape.param(params, hw);
                let hb = tape.param(params, hb);
                let xw = x.project(tape, hw)?;
                let pre = tape.add_bias(xw, hb)?;
                let h = tape.sigmoid(pre);
                tape.affine(h, w, b)
            }
        }
    }

    fn record(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        x1: &Features,
        x2: &Features,
    ) -> Result<(Var, Var)> {
        if x1.rows() != x2.rows() {
            return Err(Error::dim(
                "dcca",
                format!("views have {} and {} rows", x1.rows(), x2.rows()),
            ));
        }
        Ok((
            self.record_view(params, tape, 0, x1)?,
            self.record_view(params, tape, 1, x2)?,
        ))
    }

    /// Both projections, each `n × k`.
    pub fn project(&self, x1: &Features, x2: &Features) -> Result<(DenseMatrix, DenseMatrix)> {
        let mut tape = Tape::new();
        let (h1, h2) = self.record(&self.params, &mut tape, x1, x2)?;
        Ok((tape.value(h1).clone(), tape.value(h2).clone()))
    }

    /// Total canonical correlation of the current projections.
    pub fn correlation(&self, x1: &Features, x2: &Features) -> Result<f64> {
        let (h1, h2) = self.project(x1, x2)?;
        Ok(-cca_loss(&h1, &h2, self.config.cca_reg)?)
    }

    /// `cca_loss` of the projections; fills the parameter gradients.
    pub fn loss_and_grad(&mut self, x1: &Features, x2: &Features) -> Result<f64> {
        let mut tape = Tape::new();
        let (h1, h2) = self.record(&self.params, &mut tape, x1, x2)?;
        let loss = tape.neg_correlation(h1, h2, self.config.cca_reg)?;
        tape.backward(loss, &mut self.params)?;
        Ok(tape.value(loss).get(0, 0))
    }

    /// Full-batch Adam on the correlation objective. Returns the total
    /// correlation before each step.
    pub fn fit(
        &mut self,
        x1: &Features,
        x2: &Features,
        epochs: usize,
        lr: f64,
    ) -> Result<Vec<f64>> {
        let adam = Adam::with_lr(lr);
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let loss = self.loss_and_grad(x1, x2)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("correlation loss became {loss}")));
            }
            history.push(-loss);
            adam.step(&mut self.params);
        }
        Ok(history)
    }
}

/// Column means and standard deviations used to put both projections on a
/// common scale before classification.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Standardizer {
    pub(crate) mean: DenseMatrix,
    pub(crate) scale: DenseMatrix,
}

impl Standardizer {
    pub(crate) fn fit(z: &DenseMatrix) -> Self {
        let n = z.rows().max(1) as f64;
        let mut mean = z.column_sums();
        mean.scale(1.0 / n);
        let mut var = DenseMatrix::zeros(1, z.cols());
        for r in 0..z.rows() {
            for (c, &v) in z.row(r).iter().enumerate() {
                let d = v - mean.get(0, c);
                var.set(0, c, var.get(0, c) + d * d);
            }
        }
        let scale = var.map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        Self { mean, scale }
    }

    pub(crate) fn apply(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        if z.cols() != self.mean.cols() {
            return Err(Error::dim(
                "standardize",
                format!("{} columns, fitted on {}", z.cols(), self.mean.cols()),
            ));
        }
        let mut out = z.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean.get(0, c)) / self.scale.get(0, c);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DccaTrace {
    /// Total correlation before each stage-1 step.
    pub correlation: Vec<f64>,
    pub classifier: TrainTrace,
}

/// Frozen view networks feeding a softmax classifier.
#[derive(Clone, Debug)]
pub struct DccaModel {
    pub(crate) nets: ProjectionNets,
    pub(crate) standardizer: Standardizer,
    pub(crate) classifier: MlpModel,
}

impl DccaModel {
    pub fn nets(&self) -> &ProjectionNets {
        &self.nets
    }

    pub fn classifier(&self) -> &MlpModel {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut MlpModel {
        &mut self.classifier
    }

    /// Standardised `[f1(X) | f2(Â)]`, the classifier input.
    pub fn joint_features(
        &self,
        x: &Arc<SparseMatrix>,
        a_hat: &Arc<SparseMatrix>,
    ) -> Result<Features> {
        let (h1, h2) = self.nets.project(
            &Features::Sparse(Arc::clone(x)),
            &Features::Sparse(Arc::clone(a_hat)),
        )?;
        Ok(Features::from(self.standardizer.apply(&h1.hstack(&h2)?)?))
    }

    pub fn predict_proba(
        &self,
        x: &Arc<SparseMatrix>,
        a_hat: &Arc<SparseMatrix>,
    ) -> Result<DenseMatrix> {
        self.classifier
            .predict_proba(&self.joint_features(x, a_hat)?)
    }
}

/// Stage 1 fits both view networks to maximise correlation over every user;
/// stage 2 freezes them and trains a one-hidden-layer classifier on the
/// labelled rows of their concatenated outputs.
pub fn train_dcca(
    views: &ViewMatrices,
    partition: &Partition,
    config: DccaConfig,
    opts: &TrainOptions,
    monitor: Option<&DevMonitor<'_>>,
) -> Result<(DccaModel, DccaTrace)> {
    partition.require_classes()?;
    let x1 = Features::Sparse(Arc::clone(&views.x));
    let x2 = Features::Sparse(Arc::clone(&views.a_hat));
    let mut nets = ProjectionNets::new((x1.cols(), x2.cols()), config, opts.seed)?;
    let correlation = nets.fit(&x1, &x2, config.cca_epochs, config.cca_lr)?;

    let (h1, h2) = nets.project(&x1, &x2)?;
    let joint = h1.hstack(&h2)?;
    let standardizer = Standardizer::fit(&joint);
    let input = Features::from(standardizer.apply(&joint)?);
    let mlp_config = MlpConfig {
        hidden_size: config.supervised_hidden,
        dropout: config.dropout,
    };
    let mut classifier =
        MlpModel::new(input.cols(), partition.num_classes(), mlp_config, opts.seed)?;
    let classifier_trace = classifier.fit(&input, partition, opts, monitor)?;
    Ok((
        DccaModel {
            nets,
            standardizer,
            classifier,
        },
        DccaTrace {
            correlation,
            classifier: classifier_trace,
        },
    ))
}
