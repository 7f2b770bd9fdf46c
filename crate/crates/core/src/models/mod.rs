//! Trainable geolocation models: highway GCN, the label-feedback GCN-LP
//! variant, the text+network concatenation MLP and deep CCA.

mod checkpoint;
mod dcca;
mod features;
mod gcn;
mod gcn_lp;
mod mlp;
mod train;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, RegionTree};
use crate::tensor::DenseMatrix;

pub use checkpoint::{read_archive, write_archive, Archive, TrainedModel};
pub use dcca::{cca_loss, train_dcca, DccaConfig, DccaModel, DccaTrace, ProjectionNets};
pub use features::Features;
pub use gcn::{highway_combine, train_gcn, GcnConfig, GcnModel, HighwayGate};
pub use gcn_lp::{train_gcn_lp, GcnLpConfig, GcnLpModel, LabelFeedback, LpInput};
pub use mlp::{mlp_input, train_mlp, MlpConfig, MlpModel};
pub use train::{EpochRecord, TrainTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Gcn,
    GcnLp,
    Mlp,
    Dcca,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::GcnLp => "gcn-lp",
            ModelKind::Mlp => "mlp",
            ModelKind::Dcca => "dcca",
        }
    }

    /// Whether the model has a depth and optional highway gates.
    pub fn is_graph_conv(&self) -> bool {
        matches!(self, ModelKind::Gcn | ModelKind::GcnLp)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(ModelKind::Gcn),
            "gcn-lp" => Ok(ModelKind::GcnLp),
            "mlp" => Ok(ModelKind::Mlp),
            "dcca" => Ok(ModelKind::Dcca),
            other => Err(Error::Argument(format!("unknown model {other:?}"))),
        }
    }
}

/// Labelled (`U_S`) and held-out (`U_H`) users with class labels for `U_S`.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    n_users: usize,
    labeled: Vec<usize>,
    labels: Vec<usize>,
    heldout: Vec<usize>,
    num_classes: usize,
}

impl Partition {
    pub fn new(
        n_users: usize,
        labeled: Vec<usize>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if labeled.len() != labels.len() {
            return Err(Error::dim(
                "partition",
                format!("{} users, {} labels", labeled.len(), labels.len()),
            ));
        }
        let mut seen = vec![false; n_users];
        for &u in &labeled {
            if u >= n_users {
                return Err(Error::Argument(format!("user {u} out of range {n_users}")));
            }
            if std::mem::replace(&mut seen[u], true) {
                return Err(Error::Argument(format!("user {u} labelled twice")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Argument(format!(
                "label {bad} with {num_classes} classes"
            )));
        }
        let heldout = (0..n_users).filter(|&u| !seen[u]).collect();
        Ok(Self {
            n_users,
            labeled,
            labels,
            heldout,
            num_classes,
        })
    }

    /// Builds from a label for every user, keeping only those in `labeled`.
    pub fn from_full_labels(
        all_labels: &[usize],
        labeled: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let labels = labeled
            .iter()
            .map(|&u| {
                all_labels
                    .get(u)
                    .copied()
                    .ok_or_else(|| Error::Argument(format!("user {u} has no label")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(all_labels.len(), labeled, labels, num_classes)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn heldout(&self) -> &[usize] {
        &self.heldout
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// One-hot label rows for `U_S`, in `labeled()` order.
    pub fn one_hot(&self) -> DenseMatrix {
        let mut y = DenseMatrix::zeros(self.labeled.len(), self.num_classes);
        for (r, &c) in self.labels.iter().enumerate() {
            y.set(r, c, 1.0);
        }
        y
    }

    pub(crate) fn require_classes(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Argument(format!(
                "need at least 2 classes, found {}",
                self.num_classes
            )));
        }
        if self.labeled.is_empty() {
            return Err(Error::Argument("no labelled users".into()));
        }
        Ok(())
    }
}

/// Row-wise argmax; ties go to the lowest class id.
pub fn predict(probs: &DenseMatrix) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Held-out users scored after every epoch.
#[derive(Clone, Copy, Debug)]
pub struct DevMonitor<'a> {
    pub users: &'a [usize],
    pub truth: &'a [GeoPoint],
    pub tree: &'a RegionTree,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Early stopping on dev median error; requires a [`DevMonitor`].
    pub patience: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            seed: 0,
            patience: None,
        }
    }
}
