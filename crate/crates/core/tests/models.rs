//! Behaviour of the four models: forward passes against a nested-vector
//! oracle, training, masking and the label-feedback and CCA pieces.
mod common;
mod oracles;

use std::sync::Arc;

use common::{instance, random_dense, rng, Instance};
use geograph_core::harness::{generate_synthetic, synthetic_region, SynthConfig};
use geograph_core::models::{
    cca_loss, highway_combine, mlp_input, predict, train_dcca, train_gcn, train_gcn_lp, train_mlp,
    DccaConfig, Features, GcnConfig, GcnLpConfig, GcnModel, HighwayGate, LabelFeedback, LpInput,
    MlpConfig, MlpModel, Partition, TrainOptions, TrainedModel,
};
use geograph_core::views::normalize_adjacency;
use geograph_core::{DenseMatrix, SparseMatrix, ViewConfig, ViewMatrices};
use oracles::{matmul, Mat};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn rows_of(d: &DenseMatrix) -> Mat {
    (0..d.rows()).map(|r| d.row(r).to_vec()).collect()
}

fn affine(x: &Mat, w: &DenseMatrix, b: &DenseMatrix) -> Mat {
    let mut out = matmul(x, &rows_of(w));
    for row in &mut out {
        for (v, bias) in row.iter_mut().zip(b.row(0)) {
            *v += bias;
        }
    }
    out
}

fn relu(m: Mat) -> Mat {
    m.into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect()
}

/// Evaluation-mode GCN logits written out with plain loops.
fn oracle_gcn_logits(model: &GcnModel, x: &Mat, a_hat: &Mat) -> Mat {
    let p = model.params();
    let get = |name: &str| p.value(p.id(name).unwrap());
    let layers = model.config().num_hidden_layers;
    let conv = |h: &Mat, name: &str| {
        let hw = matmul(h, &rows_of(get(&format!("{name}.w"))));
        let mut agg = matmul(a_hat, &hw);
        for row in &mut agg {
            for (v, b) in row.iter_mut().zip(get(&format!("{name}.b")).row(0)) {
                *v += b;
            }
        }
        agg
    };
    let mut h = relu(conv(x, "conv0"));
    for l in 1..layers {
        let candidate = relu(conv(&h, &format!("conv{l}")));
        h = match p.id(&format!("gate{l}.w")) {
            Some(_) => {
                let z = affine(&h, get(&format!("gate{l}.w")), get(&format!("gate{l}.b")));
                h.iter()
                    .zip(&candidate)
                    .zip(&z)
                    .map(|((hin, hnew), zr)| {
                        hin.iter()
                            .zip(hnew)
                            .zip(zr)
                            .map(|((a, b), z)| {
                                let t = 1.0 / (1.0 + (-z).exp());
                                b * t + a * (1.0 - t)
                            })
                            .collect()
                    })
                    .collect()
            }
            None => candidate,
        };
    }
    conv(&h, "out")
}

fn assert_distributions(p: &DenseMatrix, what: &str) {
    for r in 0..p.rows() {
        let s: f64 = p.row(r).iter().sum();
        assert!((s - 1.0).abs() <= 1e-8, "{what}: row {r} sums to {s}");
        assert!(
            p.row(r).iter().all(|&v| v >= 0.0),
            "{what}: negative probability"
        );
    }
}

fn opts(epochs: usize, lr: f64, seed: u64) -> TrainOptions {
    TrainOptions {
        epochs,
        lr,
        seed,
        patience: None,
    }
}

fn small_gcn(layers: usize, highway: bool) -> GcnConfig {
    GcnConfig {
        hidden_size: 6,
        num_hidden_layers: layers,
        use_highway: highway,
        dropout: 0.5,
        lambda: 1.0,
    }
}

fn small_dcca() -> DccaConfig {
    DccaConfig {
        proj_hidden: 6,
        proj_out: 3,
        supervised_hidden: 5,
        cca_epochs: 5,
        cca_lr: 1e-2,
        ..DccaConfig::default()
    }
}

#[test]
fn gcn_forward_matches_oracle() {
    for seed in 0..5 {
        let inst = instance(seed, 12, 7, 3);
        let x = rows_of(&inst.x.to_dense());
        let a_hat = rows_of(&inst.a_hat.to_dense());
        for (layers, highway) in [(1, false), (2, true), (3, true), (3, false)] {
            let mut model = GcnModel::new(7, 3, small_gcn(layers, highway), seed).unwrap();
            common::jitter_biases(model.params_mut(), seed);
            let got = model.logits(&inst.text(), &inst.a_hat).unwrap();
            let want = oracle_gcn_logits(&model, &x, &a_hat);
            for r in 0..12 {
                for c in 0..3 {
                    assert!(
                        (got.get(r, c) - want[r][c]).abs() < 1e-12,
                        "layers {layers} highway {highway}"
                    );
                }
            }
            assert_eq!(model.num_convolutions(), layers + 1);
        }
    }
}

#[test]
fn identity_graph_reduces_to_mlp_on_text() {
    let inst = instance(4, 10, 6, 2);
    let identity = Arc::new(SparseMatrix::identity(10));
    let model = GcnModel::new(6, 2, small_gcn(1, false), 1).unwrap();
    let got = model.logits(&inst.text(), &identity).unwrap();
    let p = model.params();
    let get = |n: &str| p.value(p.id(n).unwrap());
    let h = relu(affine(
        &rows_of(&inst.x.to_dense()),
        get("conv0.w"),
        get("conv0.b"),
    ));
    let want = affine(&h, get("out.w"), get("out.b"));
    for r in 0..10 {
        for c in 0..2 {
            assert!((got.get(r, c) - want[r][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn highway_combine_limits() {
    let mut r = rng(2);
    let h_in = random_dense(4, 3, &mut r);
    let h_new = random_dense(4, 3, &mut r);
    let gate =
        |b: f64| HighwayGate::new(DenseMatrix::zeros(3, 3), DenseMatrix::filled(1, 3, b)).unwrap();
    assert_eq!(highway_combine(&h_in, &h_new, &gate(50.0)).unwrap(), h_new);
    assert!(
        highway_combine(&h_in, &h_new, &gate(-50.0))
            .unwrap()
            .max_abs_diff(&h_in)
            < 1e-20
    );
    let avg = h_in.zip_map(&h_new, "avg", |a, b| 0.5 * (a + b)).unwrap();
    assert!(
        highway_combine(&h_in, &h_new, &gate(0.0))
            .unwrap()
            .max_abs_diff(&avg)
            < 1e-15
    );
    assert!(HighwayGate::new(DenseMatrix::zeros(3, 2), DenseMatrix::zeros(1, 2)).is_err());
    assert!(highway_combine(&h_in, &random_dense(4, 2, &mut r), &gate(0.0)).is_err());

    let model = GcnModel::new(5, 2, small_gcn(3, true), 0).unwrap();
    assert!(model.gate(0).is_none());
    for l in 1..3 {
        let g = model.gate(l).unwrap();
        assert_eq!(g.width(), 6);
        assert!(g.b.as_slice().iter().all(|&b| b == -1.0));
    }
    let t = model
        .gate(1)
        .unwrap()
        .transform(&random_dense(3, 6, &mut r))
        .unwrap();
    assert!(t.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
}

/// Two planted communities with region-specific text; labels by region.
fn two_communities(n: usize, fraction: f64, seed: u64) -> (ViewMatrices, Partition) {
    let bundle = generate_synthetic(&SynthConfig {
        n_users: n,
        n_regions: 2,
        p_in: 0.05,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let views = bundle.build_views(&ViewConfig::default()).unwrap();
    let mut users: Vec<usize> = (0..n).collect();
    users.shuffle(&mut rng(seed));
    let labeled: Vec<usize> = users[..(n as f64 * fraction).ceil() as usize].to_vec();
    let labels = labeled.iter().map(|&u| synthetic_region(u, 2)).collect();
    (views, Partition::new(n, labeled, labels, 2).unwrap())
}

#[test]
fn training_loss_decreases() {
    for seed in 0..3 {
        let (views, partition) = two_communities(200, 0.1, seed);
        let config = GcnConfig {
            hidden_size: 32,
            num_hidden_layers: 2,
            ..GcnConfig::default()
        };
        let (_, trace) =
            train_gcn(&views, &partition, config, &opts(10, 1e-3, seed), None).unwrap();
        let losses = trace.losses();
        assert_eq!(losses.len(), 10);
        assert!(losses[9] < losses[0], "seed {seed}: {losses:?}");
        let best: Vec<f64> = losses
            .iter()
            .scan(f64::INFINITY, |b, &l| {
                *b = b.min(l);
                Some(*b)
            })
            .collect();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn separable_data_is_fit_exactly() {
    // all users labelled, no graph, class = parity, each class owns a term
    let n = 20;
    let x = SparseMatrix::from_triplets(
        n,
        5,
        (0..n)
            .map(|i| (i, i % 2, 1.0))
            .chain((0..n).map(|i| (i, 2 + i % 3, 0.5))),
    )
    .unwrap();
    let partition =
        Partition::new(n, (0..n).collect(), (0..n).map(|i| i % 2).collect(), 2).unwrap();
    let a_hat = Arc::new(SparseMatrix::identity(n));
    let features = Features::Sparse(Arc::new(x));
    let config = GcnConfig {
        hidden_size: 8,
        num_hidden_layers: 1,
        dropout: 0.0,
        ..GcnConfig::default()
    };
    let mut model = GcnModel::new(5, 2, config, 3).unwrap();
    model
        .fit(&features, &a_hat, &partition, &opts(200, 1e-2, 3), None)
        .unwrap();
    let predicted = predict(&model.predict_proba(&features, &a_hat).unwrap());
    assert_eq!(predicted, partition.labels());
}

#[test]
fn zero_epochs_keeps_initial_parameters() {
    let inst = instance(1, 8, 6, 2);
    let views = inst.views();
    let (trained, trace) = train_gcn(
        &views,
        &inst.partition,
        small_gcn(2, true),
        &opts(0, 1e-2, 7),
        None,
    )
    .unwrap();
    let fresh = GcnModel::new(6, 2, small_gcn(2, true), 7).unwrap();
    assert!(trace.epochs.is_empty());
    for ((n1, v1), (n2, v2)) in trained.params().iter().zip(fresh.params().iter()) {
        assert_eq!(n1, n2);
        assert_eq!(v1, v2);
    }
}

#[test]
fn training_is_deterministic() {
    let inst = instance(2, 10, 6, 3);
    let views = inst.views();
    let run = || {
        train_gcn(
            &views,
            &inst.partition,
            small_gcn(2, true),
            &opts(15, 1e-2, 5),
            None,
        )
        .unwrap()
    };
    let ((m1, t1), (m2, t2)) = (run(), run());
    assert_eq!(t1.losses(), t2.losses());
    for ((_, a), (_, b)) in m1.params().iter().zip(m2.params().iter()) {
        assert_eq!(a.as_slice(), b.as_slice());
    }
    let (_, other) = train_gcn(
        &views,
        &inst.partition,
        small_gcn(2, true),
        &opts(15, 1e-2, 6),
        None,
    )
    .unwrap();
    assert_ne!(
        t1.losses(),
        other.losses(),
        "dropout stream ignores the seed"
    );
}

fn all_models(inst: &Instance, partition: &Partition) -> Vec<TrainedModel> {
    let views = inst.views();
    let o = opts(3, 1e-2, 0);
    vec![
        TrainedModel::Gcn(
            train_gcn(&views, partition, small_gcn(2, true), &o, None)
                .unwrap()
                .0,
        ),
        TrainedModel::GcnLp(
            train_gcn_lp(
                &views,
                partition,
                GcnLpConfig {
                    gcn: small_gcn(2, false),
                    ..GcnLpConfig::default()
                },
                &o,
                None,
            )
            .unwrap()
            .0,
        ),
        TrainedModel::Mlp(
            train_mlp(
                &views,
                partition,
                MlpConfig {
                    hidden_size: 5,
                    dropout: 0.5,
                },
                &o,
                None,
            )
            .unwrap()
            .0,
        ),
        TrainedModel::Dcca(
            train_dcca(&views, partition, small_dcca(), &o, None)
                .unwrap()
                .0,
        ),
    ]
}

#[test]
fn outputs_are_distributions() {
    for seed in 0..3 {
        let inst = instance(seed, 14, 6, 3);
        for model in all_models(&inst, &inst.partition) {
            let p = model.predict_proba(&inst.views()).unwrap();
            assert_eq!(p.shape(), (14, 3));
            assert_distributions(&p, model.kind().as_str());
        }
    }
}

#[test]
fn heldout_labels_never_reach_the_loss() {
    let inst = instance(3, 16, 6, 3);
    let mut all: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let labeled = inst.partition.labeled().to_vec();
    for (&u, &y) in labeled.iter().zip(inst.partition.labels()) {
        all[u] = y;
    }
    let heldout = inst.partition.heldout().to_vec();
    let mut permuted = all.clone();
    let mut shuffled: Vec<usize> = heldout.iter().map(|&u| all[u]).collect();
    shuffled.shuffle(&mut rng(11));
    shuffled.rotate_left(1);
    for (&u, y) in heldout.iter().zip(shuffled) {
        permuted[u] = (y + 1) % 3;
    }
    let p1 = Partition::from_full_labels(&all, labeled.clone(), 3).unwrap();
    let p2 = Partition::from_full_labels(&permuted, labeled, 3).unwrap();

    let mut gcn = GcnModel::new(6, 3, small_gcn(2, true), 0).unwrap();
    let l1 = gcn.loss_and_grad(&inst.text(), &inst.a_hat, &p1).unwrap();
    let g1: Vec<DenseMatrix> = gcn
        .params()
        .ids()
        .map(|id| gcn.params().grad(id).clone())
        .collect();
    let l2 = gcn.loss_and_grad(&inst.text(), &inst.a_hat, &p2).unwrap();
    let g2: Vec<DenseMatrix> = gcn
        .params()
        .ids()
        .map(|id| gcn.params().grad(id).clone())
        .collect();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(g1, g2);

    let input = Features::Sparse(Arc::new(mlp_input(&inst.x, &inst.a_hat).unwrap()));
    let mut mlp = MlpModel::new(input.cols(), 3, MlpConfig::default(), 0).unwrap();
    assert_eq!(
        mlp.loss_and_grad(&input, &p1).unwrap().to_bits(),
        mlp.loss_and_grad(&input, &p2).unwrap().to_bits()
    );

    // whole training runs, including feedback and DCCA, end bit-identical
    let a = all_models(&inst, &p1);
    let b = all_models(&inst, &p2);
    for (m1, m2) in a.iter().zip(&b) {
        let (x, y) = (
            m1.predict_proba(&inst.views()).unwrap(),
            m2.predict_proba(&inst.views()).unwrap(),
        );
        assert_eq!(x.as_slice(), y.as_slice(), "{}", m1.kind().as_str());
    }
}

#[test]
fn fewer_than_two_classes_is_rejected() {
    let inst = instance(0, 8, 6, 2);
    let one = Partition::new(8, vec![0, 1], vec![0, 0], 1).unwrap();
    assert!(train_gcn(
        &inst.views(),
        &one,
        small_gcn(1, false),
        &opts(1, 1e-2, 0),
        None
    )
    .is_err());
    assert!(train_mlp(
        &inst.views(),
        &one,
        MlpConfig::default(),
        &opts(1, 1e-2, 0),
        None
    )
    .is_err());
}

#[test]
fn mlp_input_layout() {
    let x = SparseMatrix::from_triplets(3, 2, [(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
    let a = SparseMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
    let a_hat = normalize_adjacency(&a, 1.0).unwrap().matrix;
    let input = mlp_input(&x, &a_hat).unwrap();
    assert_eq!(input.cols(), 5);
    // user 2 is isolated: its network part holds only the self-loop
    let net: Vec<(usize, f64)> = input.row(2).filter(|&(c, _)| c >= 2).collect();
    assert_eq!(net, vec![(4, 1.0)]);
}

#[test]
fn label_feedback_rule() {
    let partition = Partition::new(5, vec![0, 3], vec![1, 0], 2).unwrap();
    let mut fb = LabelFeedback::new(&partition, 0.2);
    let zero_heldout = |fb: &LabelFeedback| {
        [1, 2, 4]
            .iter()
            .all(|&u| fb.block().row(u).iter().all(|&v| v == 0.0))
    };
    assert!(zero_heldout(&fb));
    assert_eq!(fb.block().row(0), &[0.0, 1.0]);
    assert_eq!(fb.block().row(3), &[1.0, 0.0]);

    let probs =
        DenseMatrix::from_rows(&[[0.3, 0.7], [0.6, 0.4], [0.1, 0.9], [0.5, 0.5], [0.2, 0.8]]);
    assert!(!fb.update(0.19, &probs).unwrap());
    assert!(!fb.is_triggered() && zero_heldout(&fb));
    assert!(fb.update(0.2, &probs).unwrap());
    assert!(fb.is_triggered());
    assert_eq!(fb.block().row(1), &[0.6, 0.4]);
    assert_eq!(fb.block().row(0), &[0.0, 1.0], "labelled rows stay one-hot");
    // once fired, held-out rows follow the latest predictions regardless of accuracy
    let later = DenseMatrix::filled(5, 2, 0.5);
    assert!(fb.update(0.0, &later).unwrap());
    assert_eq!(fb.block().row(4), &[0.5, 0.5]);
    assert_eq!(fb.block().row(3), &[1.0, 0.0]);
    assert!(fb.update(1.0, &DenseMatrix::zeros(4, 2)).is_err());
}

#[test]
fn gcn_lp_inputs_and_trigger() {
    let inst = instance(5, 12, 6, 2);
    let views = inst.views();
    let lp = |trigger: f64, input: LpInput| GcnLpConfig {
        gcn: small_gcn(1, false),
        input,
        trigger,
    };
    let o = opts(4, 1e-2, 0);

    let (never, _) = train_gcn_lp(
        &views,
        &inst.partition,
        lp(2.0, LpInput::AdjacencyAndLabels),
        &o,
        None,
    )
    .unwrap();
    assert_eq!(never.gcn().input_dim(), 12 + 2);
    for &u in inst.partition.heldout() {
        assert!(never.label_block().row(u).iter().all(|&v| v == 0.0));
    }
    for (&u, &y) in inst.partition.labeled().iter().zip(inst.partition.labels()) {
        assert_eq!(never.label_block().get(u, y), 1.0);
    }

    let (always, _) = train_gcn_lp(
        &views,
        &inst.partition,
        lp(0.0, LpInput::AdjacencyAndLabels),
        &o,
        None,
    )
    .unwrap();
    for &u in inst.partition.heldout() {
        let row = always.label_block().row(u);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12 && row.iter().all(|&v| v > 0.0));
    }

    let (bare, _) = train_gcn_lp(
        &views,
        &inst.partition,
        lp(0.2, LpInput::AdjacencyOnly),
        &o,
        None,
    )
    .unwrap();
    assert_eq!(bare.gcn().input_dim(), 12);
    assert_distributions(
        &bare.predict_proba(&views.a, &views.a_hat).unwrap(),
        "adjacency only",
    );
}

#[test]
fn cca_loss_examples() {
    let mut r = rng(8);
    let h: DenseMatrix = random_dense(200, 1, &mut r);
    assert!((cca_loss(&h, &h, 1e-10).unwrap() + 1.0).abs() < 1e-6);

    let h1 = random_dense(10_000, 1, &mut r);
    let h2 = random_dense(10_000, 1, &mut r);
    assert!(cca_loss(&h1, &h2, 1e-8).unwrap().abs() < 0.05);

    let h1 = random_dense(300, 2, &mut r);
    let noise = random_dense(300, 2, &mut r);
    let h2 = h1.zip_map(&noise, "add", |a, b| a + 0.5 * b).unwrap();
    let swapped = DenseMatrix::from_vec(
        300,
        2,
        (0..300)
            .flat_map(|i| [h2.get(i, 1), h2.get(i, 0)])
            .collect(),
    )
    .unwrap();
    let (a, b) = (
        cca_loss(&h1, &h2, 1e-4).unwrap(),
        cca_loss(&h1, &swapped, 1e-4).unwrap(),
    );
    assert!((a - b).abs() < 1e-12);

    assert!(cca_loss(
        &random_dense(3, 3, &mut r),
        &random_dense(3, 3, &mut r),
        1e-4
    )
    .is_err());
    assert!(cca_loss(
        &random_dense(20, 2, &mut r),
        &random_dense(19, 2, &mut r),
        1e-4
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cca_loss_is_bounded(n in 12usize..80, k in 1usize..5, coupling in 0.0f64..2.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let h1 = random_dense(n, k, &mut r);
        let noise = random_dense(n, k, &mut r);
        let h2 = h1.zip_map(&noise, "mix", |a, b| coupling * a + b).unwrap();
        let loss = cca_loss(&h1, &h2, 1e-6).unwrap();
        prop_assert!(loss <= 1e-12 && loss >= -(k as f64) - 1e-9, "loss {}", loss);
    }
}

#[test]
fn dcca_classifier_sees_both_projections() {
    let inst = instance(6, 20, 6, 2);
    let config = DccaConfig {
        proj_out: 4,
        ..small_dcca()
    };
    let (model, trace) = train_dcca(
        &inst.views(),
        &inst.partition,
        config,
        &opts(2, 1e-2, 0),
        None,
    )
    .unwrap();
    assert_eq!(model.classifier().input_dim(), 8);
    assert_eq!(trace.correlation.len(), config.cca_epochs);
    let joint = model.joint_features(&inst.x, &inst.a_hat).unwrap();
    assert_eq!((joint.rows(), joint.cols()), (20, 8));
    let bad = DccaConfig {
        proj_hidden: 2,
        proj_out: 4,
        ..small_dcca()
    };
    assert!(train_dcca(&inst.views(), &inst.partition, bad, &opts(1, 1e-2, 0), None).is_err());
}

#[test]
fn linear_dcca_raises_correlation() {
    let mut r = rng(12);
    let n = 300;
    let z = random_dense(n, 2, &mut r);
    let x1 = z.hstack(&random_dense(n, 3, &mut r)).unwrap();
    let jitter = random_dense(n, 2, &mut r);
    let shared = z.zip_map(&jitter, "mix", |a, b| -a + 0.1 * b).unwrap();
    let x2 = random_dense(n, 3, &mut r).hstack(&shared).unwrap();
    let config = DccaConfig {
        linear: true,
        proj_hidden: 2,
        proj_out: 2,
        cca_reg: 1e-6,
        ..DccaConfig::default()
    };
    let mut nets = geograph_core::models::ProjectionNets::new((5, 5), config, 0).unwrap();
    let (f1, f2) = (Features::Dense(Arc::new(x1)), Features::Dense(Arc::new(x2)));
    let history = nets.fit(&f1, &f2, 300, 1e-2).unwrap();
    assert!(
        history.last().unwrap() > &1.9,
        "{:?}",
        &history[history.len() - 3..]
    );
    assert!(history.last().unwrap() > &history[0]);
}
