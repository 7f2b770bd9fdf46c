use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{predict, DevMonitor, Partition, TrainOptions};
use crate::error::{Error, Result};
use crate::geo::evaluate;
use crate::tensor::{softmax_rows, Adam, DenseMatrix, ParamSet, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: Option<f64>,
    pub dev_median_km: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept when early stopping is on.
    pub best_epoch: Option<usize>,
}

impl TrainTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

pub(crate) fn accuracy(pred: &[usize], partition: &Partition) -> f64 {
    let hits = partition
        .labeled()
        .iter()
        .zip(partition.labels())
        .filter(|(&u, &y)| pred[u] == y)
        .count();
    hits as f64 / partition.labeled().len() as f64
}

pub(crate) fn dev_median(pred: &[usize], monitor: &DevMonitor<'_>) -> Result<f64> {
    let p: Vec<usize> = monitor.users.iter().map(|&u| pred[u]).collect();
    Ok(evaluate(&p, monitor.truth, monitor.tree)?.median_km)
}

/// One optimisation step on the labelled cross-entropy. Returns the loss.
pub(crate) fn train_step<F>(
    params: &mut ParamSet,
    partition: &Partition,
    adam: &Adam,
    rng: &mut ChaCha8Rng,
    forward: &mut F,
) -> Result<f64>
where
    F: FnMut(&ParamSet, &mut Tape, Option<&mut ChaCha8Rng>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let logits = forward(params, &mut tape, Some(rng))?;
    let loss = tape.softmax_cross_entropy(logits, partition.labeled(), partition.labels())?;
    let value = tape.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("training loss became {value}")));
    }
    tape.backward(loss, params)?;
    adam.step(params);
    Ok(value)
}

pub(crate) fn eval_probs<F>(params: &ParamSet, forward: &mut F) -> Result<DenseMatrix>
where
    F: FnMut(&ParamSet, &mut Tape, Option<&mut ChaCha8Rng>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let logits = forward(params, &mut tape, None)?;
    Ok(softmax_rows(tape.value(logits)))
}

/// Keeps a snapshot of the state with the lowest dev median error.
pub(crate) struct EarlyStop<S> {
    patience: Option<usize>,
    best: Option<(f64, usize, S)>,
}

impl<S> EarlyStop<S> {
    pub(crate) fn new(patience: Option<usize>) -> Self {
        Self {
            patience,
            best: None,
        }
    }

    /// Records an epoch; returns true once `patience` epochs have passed
    /// without improvement. Inert when patience is unset.
    pub(crate) fn observe(
        &mut self,
        epoch: usize,
        median: f64,
        snapshot: impl FnOnce() -> S,
    ) -> bool {
        let Some(patience) = self.patience else {
            return false;
        };
        match &self.best {
            Some((b, _, _)) if median >= *b => {}
            _ => self.best = Some((median, epoch, snapshot())),
        }
        let best_epoch = self.best.as_ref().map_or(epoch, |b| b.1);
        epoch - best_epoch >= patience
    }

    pub(crate) fn finish(self) -> Option<(usize, S)> {
        self.best.map(|(_, e, s)| (e, s))
    }
}

/// Full-batch training of a single classifier on the labelled rows.
///
/// `forward` records the model on a tape and returns `|U| × c` logits; it
/// receives a dropout stream during training steps and `None` when
/// evaluating.
pub(crate) fn fit<F>(
    params: &mut ParamSet,
    partition: &Partition,
    opts: &TrainOptions,
    monitor: Option<&DevMonitor<'_>>,
    rng: &mut ChaCha8Rng,
    mut forward: F,
) -> Result<TrainTrace>
where
    F: FnMut(&ParamSet, &mut Tape, Option<&mut ChaCha8Rng>) -> Result<Var>,
{
    if opts.patience.is_some() && monitor.is_none() {
        return Err(Error::Argument("early stopping needs a dev set".into()));
    }
    let adam = Adam::with_lr(opts.lr);
    let mut trace = TrainTrace::default();
    let mut stopper = EarlyStop::new(opts.patience);

    for epoch in 0..opts.epochs {
        let loss = train_step(params, partition, &adam, rng, &mut forward)?;
        let mut record = EpochRecord {
            epoch,
            loss,
            train_accuracy: None,
            dev_median_km: None,
        };
        let mut stop = false;
        if let Some(m) = monitor {
            let pred = predict(&eval_probs(params, &mut forward)?);
            record.train_accuracy = Some(accuracy(&pred, partition));
            let median = dev_median(&pred, m)?;
            record.dev_median_km = Some(median);
            stop = stopper.observe(epoch, median, || params.clone());
        }
        trace.epochs.push(record);
        if stop {
            break;
        }
    }
    if let Some((epoch, snapshot)) = stopper.finish() {
        params.copy_values_from(&snapshot);
        trace.best_epoch = Some(epoch);
    }
    Ok(trace)
}
