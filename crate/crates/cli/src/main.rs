use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use geograph_core::harness::{
    emit_report, evaluate_split, generate_synthetic, load_checkpoint, load_dataset, run_experiment,
    run_sweep, save_checkpoint, ExperimentConfig, Provenance, Split, SweepSpec, SynthConfig,
    TreeSource,
};
use geograph_core::models::{predict, DccaConfig, LpInput, ModelKind, TrainOptions};
use geograph_core::views::VocabConfig;
use geograph_core::ViewConfig;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "geograph",
    version,
    about = "Semi-supervised user geolocation over text and mention graphs"
)]
struct Cli {
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model, score dev and test, write a checkpoint.
    Train(TrainArgs),
    /// Run every cell of a sweep spec and write report.json and report.csv.
    Sweep(SweepArgs),
    /// Write a synthetic dataset as users.jsonl and edges.tsv.
    Synth(SynthArgs),
    /// Score a saved checkpoint on a dataset.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// JSON-lines users file (id, lat, lon, text, split).
    #[arg(long)]
    users: PathBuf,
    /// Two-column TSV of mention pairs.
    #[arg(long)]
    edges: PathBuf,
    #[arg(long, default_value = "custom")]
    provenance: Provenance,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "gcn")]
    model: ModelKind,
    #[arg(long, default_value_t = 300)]
    hidden: usize,
    /// Hidden graph-conv layers.
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long)]
    no_highway: bool,
    #[arg(long, default_value_t = 50)]
    bucket: usize,
    /// Use the bucket size as given instead of scaling it by the labelled fraction.
    #[arg(long)]
    no_scale_bucket: bool,
    #[arg(long, default_value_t = 1.0)]
    labeled_fraction: f64,
    /// Coordinates the region tree is built from: labeled or all-train.
    #[arg(long, default_value = "labeled")]
    tree_from: TreeSource,
    /// Self-loop weight added before normalising the adjacency.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Stop after this many epochs without dev improvement.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    min_df: usize,
    #[arg(long, default_value_t = 0.5)]
    max_df_ratio: f64,
    #[arg(long, default_value_t = 1000)]
    max_comention_degree: usize,
    /// GCN-LP: feed only the adjacency, no label block.
    #[arg(long)]
    lp_adjacency_only: bool,
    #[arg(long, default_value_t = 1000)]
    proj_hidden: usize,
    #[arg(long, default_value_t = 500)]
    proj_out: usize,
    #[arg(long, default_value_t = 1e-4)]
    cca_reg: f64,
    #[arg(long, default_value_t = 100)]
    cca_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    cca_lr: f64,
    /// DCCA: single affine projection per view.
    #[arg(long)]
    linear_cca: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Report directory; defaults to the spec's `out`, else the spec's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_users: usize,
    #[arg(long, default_value_t = 4)]
    regions: usize,
    #[arg(long, default_value_t = 400)]
    vocab: usize,
    #[arg(long, default_value_t = 0.02)]
    p_in: f64,
    #[arg(long, default_value_t = 0.001)]
    p_out: f64,
    #[arg(long, default_value_t = 20)]
    words: usize,
    #[arg(long, default_value_t = 0.3)]
    regional_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Also write eval.json and per-class CSVs here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<geograph_core::Error> for Failure {
    fn from(e: geograph_core::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Input that cannot be read or parsed is a validation failure.
fn input<T>(r: geograph_core::Result<T>, what: &str) -> Result<T, Failure> {
    r.map_err(|e| Failure::Validation(anyhow::Error::new(e).context(format!("loading {what}"))))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(data: &DataArgs) -> Result<geograph_core::harness::DatasetBundle, Failure> {
    input(
        load_dataset(&data.users, &data.edges, data.provenance),
        "dataset",
    )
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let view = ViewConfig {
        vocab: VocabConfig {
            min_df: a.min_df,
            max_df_ratio: a.max_df_ratio,
        },
        lambda: a.lambda,
        max_comention_degree: a.max_comention_degree,
    };
    let config = ExperimentConfig {
        model: a.model,
        hidden_size: a.hidden,
        num_layers: a.layers,
        use_highway: !a.no_highway,
        dropout: a.dropout,
        bucket_size: a.bucket,
        scale_bucket: !a.no_scale_bucket,
        labeled_fraction: a.labeled_fraction,
        tree_from: a.tree_from,
        train: TrainOptions {
            epochs: a.epochs,
            lr: a.lr,
            seed: a.seed,
            patience: a.patience,
        },
        view,
        dcca: DccaConfig {
            proj_hidden: a.proj_hidden,
            proj_out: a.proj_out,
            cca_reg: a.cca_reg,
            supervised_hidden: a.hidden,
            linear: a.linear_cca,
            cca_epochs: a.cca_epochs,
            cca_lr: a.cca_lr,
            dropout: a.dropout,
        },
        lp_input: if a.lp_adjacency_only {
            LpInput::AdjacencyOnly
        } else {
            LpInput::AdjacencyAndLabels
        },
        trace_dev: false,
    };
    let bundle = load(&a.data)?;
    let views = bundle.build_views(&view)?;
    log::info!("views: {}", views.stats);
    let outcome = run_experiment(&bundle, &views, &config)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_checkpoint(&outcome, &view, &a.out.join("model.ckpt"))?;
    let report = json!({
        "config": config,
        "provenance": bundle.provenance,
        "classes": outcome.tree.num_classes(),
        "labeled": outcome.partition.labeled().len(),
        "dev": outcome.dev,
        "test": outcome.test,
        "loss": outcome.trace.losses(),
        "correlation": outcome.correlation,
        "seconds": outcome.seconds,
    });
    write_json(&a.out.join("train.json"), &report)?;
    for (name, rep) in [("dev", &outcome.dev), ("test", &outcome.test)] {
        let file = fs::File::create(a.out.join(format!("{name}_per_class.csv")))?;
        rep.write_per_class_csv(&outcome.tree, BufWriter::new(file))?;
    }
    println!(
        "{} classes={} dev: acc161={:.4} mean={:.1}km median={:.1}km | test: acc161={:.4} mean={:.1}km median={:.1}km",
        config.model.as_str(),
        outcome.tree.num_classes(),
        outcome.dev.acc161,
        outcome.dev.mean_km,
        outcome.dev.median_km,
        outcome.test.acc161,
        outcome.test.mean_km,
        outcome.test.median_km,
    );
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).context("serialising report")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.spec)
        .with_context(|| format!("reading {}", a.spec.display()))
        .map_err(Failure::Validation)?;
    let spec = input(SweepSpec::from_json(&text), "sweep spec")?;
    let base_dir = a.spec.parent().unwrap_or(Path::new(".")).to_path_buf();
    let bundle = input(spec.data.load(&base_dir), "sweep data")?;
    let report = run_sweep(&bundle, &spec)?;
    let out = a
        .out
        .or_else(|| spec.out.as_ref().map(|o| base_dir.join(o)))
        .unwrap_or(base_dir);
    let (json_path, csv_path) = emit_report(&report, &out)?;
    let failed = report.cells.iter().filter(|c| !c.ok).count();
    for row in &report.summary {
        let fmt = |s: Option<geograph_core::harness::Stat>| {
            s.map_or("-".to_string(), |s| format!("{:.1}±{:.1}", s.mean, s.std))
        };
        println!(
            "{} fraction={} depth={} dev median {} km",
            row.model,
            row.fraction,
            row.depth,
            fmt(row.dev_median_km)
        );
    }
    println!(
        "{} cells ({failed} failed); wrote {} and {}",
        report.cells.len(),
        json_path.display(),
        csv_path.display()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let config = SynthConfig {
        n_users: a.n_users,
        n_regions: a.regions,
        vocab_size: a.vocab,
        p_in: a.p_in,
        p_out: a.p_out,
        words_per_user: a.words,
        regional_weight: a.regional_weight,
        jitter_deg: a.jitter,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let bundle = generate_synthetic(&config)?;
    bundle.save(&a.out)?;
    println!(
        "{} users, {} mention pairs written to {}",
        bundle.len(),
        bundle.mentions.len(),
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let ckpt = input(load_checkpoint(&a.model), "checkpoint")?;
    let bundle = load(&a.data)?;
    let views = bundle.build_views(&ckpt.view)?;
    let probs = ckpt.model.predict_proba(&views)?;
    let predicted = predict(&probs);
    let dev = evaluate_split(&bundle, &predicted, &ckpt.tree, Split::Dev)?;
    let test = evaluate_split(&bundle, &predicted, &ckpt.tree, Split::Test)?;
    let report = json!({
        "model": ckpt.model.kind(),
        "classes": ckpt.tree.num_classes(),
        "dev": dev,
        "test": test,
    });
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write_json(&out.join("eval.json"), &report)?;
        for (name, rep) in [("dev", &dev), ("test", &test)] {
            let file = fs::File::create(out.join(format!("{name}_per_class.csv")))?;
            rep.write_per_class_csv(&ckpt.tree, BufWriter::new(file))?;
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&report).context("serialising report")?
    );
    Ok(())
}
