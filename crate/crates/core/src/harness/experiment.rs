use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::dataset::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::geo::{evaluate, EvalReport, GeoPoint, RegionTree};
use crate::models::{
    predict, read_archive, train_dcca, train_gcn, train_gcn_lp, train_mlp, write_archive, Archive,
    DccaConfig, DevMonitor, GcnConfig, GcnLpConfig, LpInput, MlpConfig, ModelKind, Partition,
    TrainOptions, TrainTrace, TrainedModel,
};
use crate::tensor::DenseMatrix;
use crate::views::{ViewConfig, ViewMatrices};

/// Which coordinates the region tree is built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeSource {
    /// Only the labelled users.
    #[default]
    Labeled,
    /// Every training user, labelled or not.
    AllTrain,
}

impl std::str::FromStr for TreeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(TreeSource::Labeled),
            "all-train" => Ok(TreeSource::AllTrain),
            other => Err(Error::Argument(format!("unknown tree source {other:?}"))),
        }
    }
}

/// Everything needed to train and score one model on one bundle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub hidden_size: usize,
    /// Hidden graph-conv layers (graph-conv models only).
    pub num_layers: usize,
    pub use_highway: bool,
    pub dropout: f64,
    pub bucket_size: usize,
    /// Scale the bucket by the labelled fraction.
    pub scale_bucket: bool,
    pub labeled_fraction: f64,
    pub tree_from: TreeSource,
    pub train: TrainOptions,
    pub view: ViewConfig,
    pub dcca: DccaConfig,
    pub lp_input: LpInput,
    /// Record dev median error after every epoch.
    pub trace_dev: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Gcn,
            hidden_size: 300,
            num_layers: 3,
            use_highway: true,
            dropout: 0.5,
            bucket_size: 50,
            scale_bucket: true,
            labeled_fraction: 1.0,
            tree_from: TreeSource::Labeled,
            train: TrainOptions::default(),
            view: ViewConfig::default(),
            dcca: DccaConfig::default(),
            lp_input: LpInput::default(),
            trace_dev: false,
        }
    }
}

impl ExperimentConfig {
    pub fn gcn_config(&self) -> GcnConfig {
        GcnConfig {
            hidden_size: self.hidden_size,
            num_hidden_layers: self.num_layers,
            use_highway: self.use_highway,
            dropout: self.dropout,
            lambda: self.view.lambda,
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            hidden_size: self.hidden_size,
            dropout: self.dropout,
        }
    }

    pub fn dcca_config(&self) -> DccaConfig {
        DccaConfig {
            dropout: self.dropout,
            ..self.dcca
        }
    }

    /// Bucket size actually used for the tree.
    pub fn effective_bucket(&self) -> usize {
        if self.scale_bucket {
            ((self.bucket_size as f64 * self.labeled_fraction).round() as usize).max(1)
        } else {
            self.bucket_size
        }
    }
}

/// Uniformly samples `⌈fraction·|train|⌉` training users; returns their
/// indices in ascending order.
pub fn subsample_labels(bundle: &DatasetBundle, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "labelled fraction {fraction} outside (0, 1]"
        )));
    }
    let train = bundle.split_indices(Split::Train);
    // guard against 0.07 * 100 = 7.000000000000001
    let k = ((fraction * train.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let k = k.min(train.len());
    if k == 0 {
        return Err(Error::Argument(format!(
            "fraction {fraction} of {} training users labels nobody",
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, train.len(), k)
        .into_iter()
        .map(|i| train[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Region tree and class labels for the labelled users.
pub fn discretize(
    bundle: &DatasetBundle,
    labeled: &[usize],
    config: &ExperimentConfig,
) -> Result<(RegionTree, Vec<GeoPoint>, Partition)> {
    let source: Vec<usize> = match config.tree_from {
        TreeSource::Labeled => labeled.to_vec(),
        TreeSource::AllTrain => bundle.split_indices(Split::Train),
    };
    let points: Vec<GeoPoint> = source.iter().map(|&u| bundle.users[u].location).collect();
    let tree = RegionTree::build(&points, config.effective_bucket())?;
    let labels = match config.tree_from {
        TreeSource::Labeled => (0..labeled.len()).map(|k| tree.training_class(k)).collect(),
        TreeSource::AllTrain => {
            let pos: std::collections::HashMap<usize, usize> =
                source.iter().enumerate().map(|(k, &u)| (u, k)).collect();
            labeled
                .iter()
                .map(|u| tree.training_class(pos[u]))
                .collect()
        }
    };
    let partition = Partition::new(bundle.len(), labeled.to_vec(), labels, tree.num_classes())?;
    Ok((tree, points, partition))
}

pub struct ExperimentOutcome {
    pub model: TrainedModel,
    pub tree: RegionTree,
    /// Coordinates the tree was built from, kept for checkpoints.
    pub tree_points: Vec<GeoPoint>,
    pub partition: Partition,
    pub trace: TrainTrace,
    /// Total correlation per stage-1 epoch, DCCA only.
    pub correlation: Vec<f64>,
    pub probs: DenseMatrix,
    pub dev: EvalReport,
    pub test: EvalReport,
    pub seconds: f64,
}

pub fn evaluate_split(
    bundle: &DatasetBundle,
    predicted: &[usize],
    tree: &RegionTree,
    split: Split,
) -> Result<EvalReport> {
    let idx = bundle.split_indices(split);
    let pred: Vec<usize> = idx.iter().map(|&u| predicted[u]).collect();
    let truth: Vec<GeoPoint> = idx.iter().map(|&u| bundle.users[u].location).collect();
    evaluate(&pred, &truth, tree)
}

/// Trains `config.model` on `views` and scores it on dev and test.
pub fn run_experiment(
    bundle: &DatasetBundle,
    views: &ViewMatrices,
    config: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    if views.num_users() != bundle.len() {
        return Err(Error::dim(
            "experiment",
            format!(
                "views over {} users, bundle has {}",
                views.num_users(),
                bundle.len()
            ),
        ));
    }
    let start = Instant::now();
    let labeled = subsample_labels(bundle, config.labeled_fraction, config.train.seed)?;
    let (tree, tree_points, partition) = discretize(bundle, &labeled, config)?;
    log::debug!(
        "{}: {} labelled users, {} classes (bucket {})",
        config.model.as_str(),
        labeled.len(),
        tree.num_classes(),
        config.effective_bucket()
    );

    let dev_users = bundle.split_indices(Split::Dev);
    let dev_truth: Vec<GeoPoint> = dev_users
        .iter()
        .map(|&u| bundle.users[u].location)
        .collect();
    let monitor = DevMonitor {
        users: &dev_users,
        truth: &dev_truth,
        tree: &tree,
    };
    let wants_monitor =
        (config.trace_dev || config.train.patience.is_some()) && !dev_users.is_empty();
    let monitor = wants_monitor.then_some(&monitor);

    let opts = &config.train;
    let mut correlation = Vec::new();
    let (model, trace) = match config.model {
        ModelKind::Gcn => {
            let (m, t) = train_gcn(views, &partition, config.gcn_config(), opts, monitor)?;
            (TrainedModel::Gcn(m), t)
        }
        ModelKind::GcnLp => {
            let lp = GcnLpConfig {
                gcn: config.gcn_config(),
                input: config.lp_input,
                ..GcnLpConfig::default()
            };
            let (m, t) = train_gcn_lp(views, &partition, lp, opts, monitor)?;
            (TrainedModel::GcnLp(m), t)
        }
        ModelKind::Mlp => {
            let (m, t) = train_mlp(views, &partition, config.mlp_config(), opts, monitor)?;
            (TrainedModel::Mlp(m), t)
        }
        ModelKind::Dcca => {
            let (m, t) = train_dcca(views, &partition, config.dcca_config(), opts, monitor)?;
            correlation = t.correlation;
            (TrainedModel::Dcca(m), t.classifier)
        }
    };
    let probs = model.predict_proba(views)?;
    let predicted = predict(&probs);
    let dev = evaluate_split(bundle, &predicted, &tree, Split::Dev)?;
    let test = evaluate_split(bundle, &predicted, &tree, Split::Test)?;
    Ok(ExperimentOutcome {
        model,
        tree,
        tree_points,
        partition,
        trace,
        correlation,
        probs,
        dev,
        test,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trained model plus what is needed to rebuild its views and classes.
pub struct Checkpoint {
    pub model: TrainedModel,
    pub tree: RegionTree,
    pub view: ViewConfig,
}

pub fn save_checkpoint(outcome: &ExperimentOutcome, view: &ViewConfig, path: &Path) -> Result<()> {
    let mut archive = outcome.model.to_archive();
    archive.header.insert("view".into(), json!(view));
    archive
        .header
        .insert("bucket".into(), json!(outcome.tree.bucket_size()));
    let coords = outcome
        .tree_points
        .iter()
        .flat_map(|p| [p.lat(), p.lon()])
        .collect();
    archive.push(
        "tree.points",
        DenseMatrix::from_vec(outcome.tree_points.len(), 2, coords)?,
    );
    let file = std::fs::File::create(path)?;
    write_archive(&archive, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let archive: Archive = read_archive(std::io::BufReader::new(file))?;
    let model = TrainedModel::from_archive(&archive)?;
    let field = |k: &str| {
        archive
            .header
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("checkpoint header lacks {k:?}")))
    };
    let view: ViewConfig = serde_json::from_value(field("view")?)?;
    let bucket: usize = serde_json::from_value(field("bucket")?)?;
    let pts = archive
        .tensor("tree.points")
        .ok_or_else(|| Error::Format("checkpoint lacks tree.points".into()))?;
    if pts.cols() != 2 {
        return Err(Error::Format("tree.points must have two columns".into()));
    }
    let points = (0..pts.rows())
        .map(|r| GeoPoint::new(pts.get(r, 0), pts.get(r, 1)))
        .collect::<Result<Vec<_>>>()?;
    let tree = RegionTree::build(&points, bucket)?;
    if tree.num_classes() != model.num_classes() {
        return Err(Error::Format(format!(
            "tree has {} classes, model predicts {}",
            tree.num_classes(),
            model.num_classes()
        )));
    }
    Ok(Checkpoint { model, tree, view })
}
