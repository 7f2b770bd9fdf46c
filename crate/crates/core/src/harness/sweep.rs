use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{load_dataset, DatasetBundle, Provenance};
use super::experiment::{run_experiment, ExperimentConfig};
use super::synth::{generate_synthetic, SynthConfig};
use crate::error::{Error, Result};
use crate::geo::EvalReport;
use crate::models::ModelKind;

/// A model entry in a sweep: the architecture plus whether highway gates
/// are on. Written as `gcn`, `gcn-nohw`, `gcn-lp`, `gcn-lp-nohw`, `mlp` or
/// `dcca`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SweepModel {
    pub kind: ModelKind,
    pub highway: bool,
}

impl SweepModel {
    pub fn new(kind: ModelKind, highway: bool) -> Self {
        Self {
            kind,
            highway: highway && kind.is_graph_conv(),
        }
    }
}

impl fmt::Display for SweepModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.as_str())?;
        if self.kind.is_graph_conv() && !self.highway {
            f.write_str("-nohw")?;
        }
        Ok(())
    }
}

impl FromStr for SweepModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, highway) = match s.strip_suffix("-nohw") {
            Some(b) => (b, false),
            None => (s, true),
        };
        let kind: ModelKind = base.parse()?;
        if !highway && !kind.is_graph_conv() {
            return Err(Error::Argument(format!(
                "{base} has no highway gates to disable"
            )));
        }
        Ok(Self::new(kind, highway))
    }
}

impl TryFrom<String> for SweepModel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SweepModel> for String {
    fn from(m: SweepModel) -> String {
        m.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    Files {
        users: PathBuf,
        edges: PathBuf,
        #[serde(default)]
        provenance: Provenance,
    },
}

impl DataSource {
    /// Loads or generates the bundle; relative file paths resolve against
    /// `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<DatasetBundle> {
        match self {
            DataSource::Synthetic(cfg) => generate_synthetic(cfg),
            DataSource::Files {
                users,
                edges,
                provenance,
            } => load_dataset(&base_dir.join(users), &base_dir.join(edges), *provenance),
        }
    }
}

fn default_depths() -> Vec<usize> {
    Vec::new()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub data: DataSource,
    pub models: Vec<SweepModel>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Hidden-layer counts for graph-conv models; empty means the base
    /// config's depth.
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub base: ExperimentConfig,
    /// Output directory for the report, relative to the spec file.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Record wall-clock seconds per cell. Off by default so reports are
    /// byte-stable across runs.
    #[serde(default)]
    pub timing: bool,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|e| Error::Argument(format!("invalid sweep spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Argument("sweep lists no models".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Argument("sweep needs at least one seed".into()));
        }
        if self.fractions.is_empty() {
            return Err(Error::Argument("sweep lists no fractions".into()));
        }
        if let Some(f) = self.fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Argument(format!("fraction {f} outside (0, 1]")));
        }
        if self.depths.contains(&0) {
            return Err(Error::Argument("depth must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Every cell in execution (and report) order.
    pub fn cells(&self) -> Vec<CellKey> {
        let depths = if self.depths.is_empty() {
            vec![self.base.num_layers]
        } else {
            self.depths.clone()
        };
        let mut cells = Vec::new();
        for &model in &self.models {
            let model_depths: &[usize] = if model.kind.is_graph_conv() {
                &depths
            } else {
                &[1]
            };
            for &fraction in &self.fractions {
                for &depth in model_depths {
                    for &seed in &self.seeds {
                        cells.push(CellKey {
                            model,
                            fraction,
                            depth,
                            seed,
                        });
                    }
                }
            }
        }
        cells
    }

    pub fn cell_config(&self, key: &CellKey) -> ExperimentConfig {
        let mut cfg = self.base;
        cfg.model = key.model.kind;
        cfg.use_highway = key.model.highway;
        if key.model.kind.is_graph_conv() {
            cfg.num_layers = key.depth;
        }
        cfg.labeled_fraction = key.fraction;
        cfg.train.seed = key.seed;
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CellKey {
    pub model: SweepModel,
    pub fraction: f64,
    pub depth: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub acc161: f64,
    pub mean_km: f64,
    pub median_km: f64,
    pub count: usize,
}

impl From<&EvalReport> for Metrics {
    fn from(r: &EvalReport) -> Self {
        Self {
            acc161: r.acc161,
            mean_km: r.mean_km,
            median_km: r.median_km,
            count: r.count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellReport {
    #[serde(flatten)]
    pub key: CellKey,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub classes: Option<usize>,
    pub dev: Option<Metrics>,
    pub test: Option<Metrics>,
    pub seconds: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

/// Seed-aggregated metrics for one (model, fraction, depth).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub model: SweepModel,
    pub fraction: f64,
    pub depth: usize,
    pub runs: usize,
    pub failed: usize,
    pub dev_acc161: Option<Stat>,
    pub dev_mean_km: Option<Stat>,
    pub dev_median_km: Option<Stat>,
    pub test_acc161: Option<Stat>,
    pub test_mean_km: Option<Stat>,
    pub test_median_km: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub spec: Option<SweepSpec>,
    pub cells: Vec<CellReport>,
    pub summary: Vec<SummaryRow>,
}

impl RunReport {
    pub fn empty(provenance: Provenance) -> Self {
        Self {
            provenance,
            spec: None,
            cells: Vec::new(),
            summary: Vec::new(),
        }
    }

    pub fn summary_for(
        &self,
        model: SweepModel,
        fraction: f64,
        depth: usize,
    ) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.model == model && r.fraction == fraction && r.depth == depth)
    }
}

pub fn summarize(cells: &[CellReport]) -> Vec<SummaryRow> {
    let mut groups: Vec<(SweepModel, f64, usize)> = Vec::new();
    for c in cells {
        let g = (c.key.model, c.key.fraction, c.key.depth);
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    groups
        .into_iter()
        .map(|(model, fraction, depth)| {
            let members: Vec<&CellReport> = cells
                .iter()
                .filter(|c| {
                    c.key.model == model && c.key.fraction == fraction && c.key.depth == depth
                })
                .collect();
            let ok: Vec<&CellReport> = members.iter().copied().filter(|c| c.ok).collect();
            let stat = |f: &dyn Fn(&CellReport) -> Option<f64>| {
                Stat::of(&ok.iter().filter_map(|c| f(c)).collect::<Vec<_>>())
            };
            SummaryRow {
                model,
                fraction,
                depth,
                runs: ok.len(),
                failed: members.len() - ok.len(),
                dev_acc161: stat(&|c| c.dev.map(|m| m.acc161)),
                dev_mean_km: stat(&|c| c.dev.map(|m| m.mean_km)),
                dev_median_km: stat(&|c| c.dev.map(|m| m.median_km)),
                test_acc161: stat(&|c| c.test.map(|m| m.acc161)),
                test_mean_km: stat(&|c| c.test.map(|m| m.mean_km)),
                test_median_km: stat(&|c| c.test.map(|m| m.median_km)),
            }
        })
        .collect()
}

/// Trains every cell of `spec` on `bundle`. Cells run in parallel; a failed
/// cell is recorded with its error and the sweep carries on.
pub fn run_sweep(bundle: &DatasetBundle, spec: &SweepSpec) -> Result<RunReport> {
    spec.validate()?;
    let views = bundle.build_views(&spec.base.view)?;
    log::info!("views: {}", views.stats);
    let cells = spec.cells();
    log::info!("running {} sweep cells", cells.len());
    let reports: Vec<CellReport> = cells
        .par_iter()
        .map(|key| {
            let cfg = spec.cell_config(key);
            match run_experiment(bundle, &views, &cfg) {
                Ok(out) => {
                    log::info!(
                        "{} fraction={} depth={} seed={}: dev median {:.1} km",
                        key.model,
                        key.fraction,
                        key.depth,
                        key.seed,
                        out.dev.median_km
                    );
                    CellReport {
                        key: *key,
                        ok: true,
                        error: None,
                        classes: Some(out.tree.num_classes()),
                        dev: Some(Metrics::from(&out.dev)),
                        test: Some(Metrics::from(&out.test)),
                        seconds: spec.timing.then_some(out.seconds),
                    }
                }
                Err(e) => {
                    log::warn!(
                        "{} fraction={} seed={} failed: {e}",
                        key.model,
                        key.fraction,
                        key.seed
                    );
                    CellReport {
                        key: *key,
                        ok: false,
                        error: Some(e.to_string()),
                        classes: None,
                        dev: None,
                        test: None,
                        seconds: None,
                    }
                }
            }
        })
        .collect();
    Ok(RunReport {
        provenance: bundle.provenance,
        spec: Some(spec.clone()),
        summary: summarize(&reports),
        cells: reports,
    })
}
