use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gcn::dropout_stream;
use super::train::{
    accuracy, dev_median, eval_probs, train_step, EarlyStop, EpochRecord, TrainTrace,
};
use super::{predict, DevMonitor, Features, GcnConfig, GcnModel, Partition, TrainOptions};
use crate::error::{Error, Result};
use crate::tensor::{Adam, DenseMatrix, ParamSet, SparseMatrix, Tape};
use crate::views::ViewMatrices;

/// Training accuracy at which predicted labels start feeding back.
pub const DEFAULT_FEEDBACK_TRIGGER: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpInput {
    /// Neighbour indicator rows followed by the label block.
    #[default]
    AdjacencyAndLabels,
    /// Neighbour indicator rows only; no label feedback.
    AdjacencyOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnLpConfig {
    pub gcn: GcnConfig,
    pub input: LpInput,
    pub trigger: f64,
}

impl Default for GcnLpConfig {
    fn default() -> Self {
        Self {
            gcn: GcnConfig::default(),
            input: LpInput::default(),
            trigger: DEFAULT_FEEDBACK_TRIGGER,
        }
    }
}

/// The `|U| × c` label block: one-hot rows for labelled users, zero rows
/// for held-out users until the trigger fires, then their latest predicted
/// distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelFeedback {
    block: DenseMatrix,
    heldout: Vec<usize>,
    trigger: f64,
    triggered: bool,
}

impl LabelFeedback {
    pub fn new(partition: &Partition, trigger: f64) -> Self {
        let mut block = DenseMatrix::zeros(partition.n_users(), partition.num_classes());
        for (&u, &y) in partition.labeled().iter().zip(partition.labels()) {
            block.set(u, y, 1.0);
        }
        Self {
            block,
            heldout: partition.heldout().to_vec(),
            trigger,
            triggered: false,
        }
    }

    pub fn block(&self) -> &DenseMatrix {
        &self.block
    }

    pub fn is_triggered(&self) -> bool {
        self.triggered
    }

    /// End-of-epoch update. Once training accuracy has reached the trigger,
    /// held-out rows are overwritten with `probs`. Returns whether the block
    /// changed.
    pub fn update(&mut self, train_accuracy: f64, probs: &DenseMatrix) -> Result<bool> {
        if probs.shape() != self.block.shape() {
            return Err(Error::dim(
                "label feedback",
                format!(
                    "predictions {:?}, block {:?}",
                    probs.shape(),
                    self.block.shape()
                ),
            ));
        }
        if !self.triggered && train_accuracy >= self.trigger {
            self.triggered = true;
        }
        if !self.triggered {
            return Ok(false);
        }
        for &u in &self.heldout {
            self.block.row_mut(u).copy_from_slice(probs.row(u));
        }
        Ok(true)
    }
}

/// Binary neighbour indicators with self-loops, `A + I`.
pub fn neighbour_indicators(a: &SparseMatrix) -> Result<SparseMatrix> {
    if a.rows() != a.cols() {
        return Err(Error::dim(
            "neighbour indicators",
            format!("A is {:?}", a.shape()),
        ));
    }
    let triplets = a
        .iter()
        .filter(|&(r, c, _)| r != c)
        .map(|(r, c, _)| (r, c, 1.0))
        .chain((0..a.rows()).map(|i| (i, i, 1.0)));
    SparseMatrix::from_triplets(a.rows(), a.cols(), triplets)
}

fn lp_features(indicators: &SparseMatrix, block: &DenseMatrix, input: LpInput) -> Result<Features> {
    Ok(match input {
        LpInput::AdjacencyOnly => Features::Sparse(Arc::new(indicators.clone())),
        LpInput::AdjacencyAndLabels => Features::Sparse(Arc::new(
            indicators.hstack(&SparseMatrix::from_dense(block))?,
        )),
    })
}

/// GCN over network-derived inputs with predicted-label feedback.
#[derive(Clone, Debug)]
pub struct GcnLpModel {
    pub(crate) gcn: GcnModel,
    pub(crate) input: LpInput,
    pub(crate) trigger: f64,
    pub(crate) label_block: DenseMatrix,
}

impl GcnLpModel {
    pub fn gcn(&self) -> &GcnModel {
        &self.gcn
    }

    pub fn gcn_mut(&mut self) -> &mut GcnModel {
        &mut self.gcn
    }

    pub fn input(&self) -> LpInput {
        self.input
    }

    /// Label block as it stood after the final epoch.
    pub fn label_block(&self) -> &DenseMatrix {
        &self.label_block
    }

    /// Model inputs built from the binary adjacency `a` and the stored label
    /// block.
    pub fn features(&self, a: &SparseMatrix) -> Result<Features> {
        if self.input == LpInput::AdjacencyAndLabels && a.rows() != self.label_block.rows() {
            return Err(Error::dim(
                "gcn-lp",
                format!(
                    "{} users, label block has {}",
                    a.rows(),
                    self.label_block.rows()
                ),
            ));
        }
        lp_features(&neighbour_indicators(a)?, &self.label_block, self.input)
    }

    pub fn predict_proba(
        &self,
        a: &SparseMatrix,
        a_hat: &Arc<SparseMatrix>,
    ) -> Result<DenseMatrix> {
        self.gcn.predict_proba(&self.features(a)?, a_hat)
    }
}

/// Trains GCN-LP. The label block is rebuilt from predictions after every
/// epoch once training accuracy reaches `config.trigger`.
pub fn train_gcn_lp(
    views: &ViewMatrices,
    partition: &Partition,
    config: GcnLpConfig,
    opts: &TrainOptions,
    monitor: Option<&DevMonitor<'_>>,
) -> Result<(GcnLpModel, TrainTrace)> {
    partition.require_classes()?;
    if opts.patience.is_some() && monitor.is_none() {
        return Err(Error::Argument("early stopping needs a dev set".into()));
    }
    let n = views.num_users();
    if partition.n_users() != n {
        return Err(Error::dim(
            "gcn-lp",
            format!(
                "partition over {} users, graph has {n}",
                partition.n_users()
            ),
        ));
    }
    let c = partition.num_classes();
    let indicators = neighbour_indicators(&views.a)?;
    let input_dim = match config.input {
        LpInput::AdjacencyOnly => n,
        LpInput::AdjacencyAndLabels => n + c,
    };
    let mut gcn = GcnModel::new(input_dim, c, config.gcn, opts.seed)?;
    let mut feedback = LabelFeedback::new(partition, config.trigger);
    let mut rng = dropout_stream(opts.seed);
    let adam = Adam::with_lr(opts.lr);
    let mut trace = TrainTrace::default();
    let mut stopper = EarlyStop::new(opts.patience);
    let mut params = std::mem::take(gcn.params_mut());
    let a_hat = &views.a_hat;

    for epoch in 0..opts.epochs {
        let features = lp_features(&indicators, feedback.block(), config.input)?;
        let mut forward = |p: &ParamSet, tape: &mut Tape, r: Option<&mut ChaCha8Rng>| {
            gcn.record(p, tape, &features, a_hat, r)
        };
        let loss = train_step(&mut params, partition, &adam, &mut rng, &mut forward)?;
        let probs = eval_probs(&params, &mut forward)?;
        let pred = predict(&probs);
        let train_accuracy = accuracy(&pred, partition);
        let mut record = EpochRecord {
            epoch,
            loss,
            train_accuracy: Some(train_accuracy),
            dev_median_km: None,
        };
        let mut stop = false;
        if let Some(m) = monitor {
            let median = dev_median(&pred, m)?;
            record.dev_median_km = Some(median);
            stop = stopper.observe(epoch, median, || (params.clone(), feedback.clone()));
        }
        if config.input == LpInput::AdjacencyAndLabels {
            feedback.update(train_accuracy, &probs)?;
        }
        trace.epochs.push(record);
        if stop {
            break;
        }
    }
    if let Some((epoch, (snapshot, fb))) = stopper.finish() {
        params.copy_values_from(&snapshot);
        feedback = fb;
        trace.best_epoch = Some(epoch);
    }
    *gcn.params_mut() = params;
    Ok((
        GcnLpModel {
            gcn,
            input: config.input,
            trigger: config.trigger,
            label_block: feedback.block,
        },
        trace,
    ))
}
