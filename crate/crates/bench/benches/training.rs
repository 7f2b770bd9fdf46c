use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use geograph_core::harness::{generate_synthetic, run_experiment, ExperimentConfig, SynthConfig};
use geograph_core::models::{ModelKind, TrainOptions};
use geograph_core::ViewConfig;

fn config(model: ModelKind) -> ExperimentConfig {
    ExperimentConfig {
        model,
        hidden_size: 64,
        num_layers: 2,
        train: TrainOptions {
            epochs: 10,
            lr: 1e-2,
            ..TrainOptions::default()
        },
        ..ExperimentConfig::default()
    }
}

fn views(c: &mut Criterion) {
    let bundle = generate_synthetic(&SynthConfig::default()).unwrap();
    c.bench_function("build_views 1000 users", |b| {
        b.iter(|| {
            bundle
                .build_views(black_box(&ViewConfig::default()))
                .unwrap()
        })
    });
}

fn ten_epochs(c: &mut Criterion) {
    let bundle = generate_synthetic(&SynthConfig::default()).unwrap();
    let views = bundle.build_views(&ViewConfig::default()).unwrap();
    let mut group = c.benchmark_group("train 10 epochs");
    group.sample_size(10);
    for model in [ModelKind::Gcn, ModelKind::GcnLp, ModelKind::Mlp] {
        let cfg = config(model);
        group.bench_function(model.as_str(), |b| {
            b.iter(|| run_experiment(&bundle, &views, &cfg).unwrap())
        });
    }
    let mut dcca = config(ModelKind::Dcca);
    dcca.dcca.proj_hidden = 128;
    dcca.dcca.proj_out = 32;
    dcca.dcca.cca_epochs = 10;
    group.bench_function("dcca", |b| {
        b.iter(|| run_experiment(&bundle, &views, &dcca).unwrap())
    });
    group.finish();
}

criterion_group!(benches, views, ten_epochs);
criterion_main!(benches);
