//! Dataset ingestion, synthetic data, experiments, sweeps and reports.

pub mod dataset;
pub mod experiment;
pub mod report;
pub mod sweep;
pub mod synth;

pub use dataset::{
    load_dataset, parse_mentions, parse_users, DatasetBundle, Provenance, Split, User,
};
pub use experiment::{
    discretize, evaluate_split, load_checkpoint, run_experiment, save_checkpoint, subsample_labels,
    Checkpoint, ExperimentConfig, ExperimentOutcome, TreeSource,
};
pub use report::{emit_report, write_csv, write_json, CSV_HEADER};
pub use sweep::{
    run_sweep, summarize, CellKey, CellReport, DataSource, Metrics, RunReport, Stat, SummaryRow,
    SweepModel, SweepSpec,
};
pub use synth::{generate_synthetic, synthetic_region, SynthConfig};
