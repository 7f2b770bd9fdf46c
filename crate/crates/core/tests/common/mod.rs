//! Random small instances and a parameter-wise gradient checker.
#![allow(dead_code)]

use std::sync::Arc;

use geograph_core::models::{Features, Partition};
use geograph_core::tensor::ParamSet;
use geograph_core::views::{normalize_adjacency, ViewStats, VocabConfig};
use geograph_core::{DenseMatrix, SparseMatrix, ViewMatrices, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracles::{fd_gradient, relative_error};

pub const FD_STEP: f64 = 1e-5;

/// A random user graph with text features and a partial labelling.
pub struct Instance {
    pub n: usize,
    pub x: Arc<SparseMatrix>,
    pub a: SparseMatrix,
    pub a_hat: Arc<SparseMatrix>,
    pub neighbours: Vec<Vec<usize>>,
    pub partition: Partition,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Undirected simple graph with edge probability `p`, as sorted
/// neighbour lists.
pub fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                nb[i].push(j);
                nb[j].push(i);
            }
        }
    }
    nb
}

pub fn adjacency_from(neighbours: &[Vec<usize>]) -> SparseMatrix {
    let n = neighbours.len();
    let triplets = neighbours
        .iter()
        .enumerate()
        .flat_map(|(i, nb)| nb.iter().map(move |&j| (i, j, 1.0)));
    SparseMatrix::from_triplets(n, n, triplets).unwrap()
}

pub fn dense_rows(neighbours: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let n = neighbours.len();
    let mut m = vec![vec![0.0; n]; n];
    for (i, nb) in neighbours.iter().enumerate() {
        for &j in nb {
            m[i][j] = 1.0;
        }
    }
    m
}

/// Text matrix with roughly half the entries present, rows never empty.
pub fn random_text(n: usize, terms: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let mut triplets = Vec::new();
    for i in 0..n {
        let forced = rng.random_range(0..terms);
        for t in 0..terms {
            if t == forced || rng.random::<f64>() < 0.5 {
                triplets.push((i, t, rng.random_range(0.1..1.0)));
            }
        }
    }
    SparseMatrix::from_triplets(n, terms, triplets).unwrap()
}

pub fn random_dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

/// `n` users, `terms` text columns, half the users labelled over `classes`
/// classes (every class used at least once when possible).
pub fn instance(seed: u64, n: usize, terms: usize, classes: usize) -> Instance {
    let mut r = rng(seed);
    let neighbours = random_graph(n, 0.35, &mut r);
    let a = adjacency_from(&neighbours);
    let a_hat = normalize_adjacency(&a, 1.0).unwrap().matrix;
    let x = random_text(n, terms, &mut r);
    let mut users: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        users.swap(i, r.random_range(0..=i));
    }
    let labeled: Vec<usize> = users[..n / 2].to_vec();
    let labels = (0..labeled.len()).map(|k| k % classes).collect();
    let partition = Partition::new(n, labeled, labels, classes).unwrap();
    Instance {
        n,
        x: Arc::new(x),
        a,
        a_hat: Arc::new(a_hat),
        neighbours,
        partition,
    }
}

impl Instance {
    pub fn text(&self) -> Features {
        Features::Sparse(Arc::clone(&self.x))
    }

    /// The instance as model-ready views (no vocabulary behind the columns).
    pub fn views(&self) -> ViewMatrices {
        ViewMatrices {
            x: Arc::clone(&self.x),
            a: self.a.clone(),
            a_hat: Arc::clone(&self.a_hat),
            lambda: 1.0,
            vocabulary: Vocabulary::fit::<String>(&[], &VocabConfig::unpruned()),
            stats: ViewStats {
                users: self.n,
                vocabulary: self.x.cols(),
                edges: self.a.nnz() / 2,
                isolated: self.neighbours.iter().filter(|nb| nb.is_empty()).count(),
                skipped_handles: 0,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares the analytic gradient left by `loss` against central
/// differences for every entry of every parameter.
pub fn grad_check<M>(
    model: &mut M,
    params: fn(&mut M) -> &mut ParamSet,
    mut loss: impl FnMut(&mut M) -> f64,
) -> GradReport {
    loss(model);
    let ids: Vec<_> = params(model).ids().collect();
    let analytic: Vec<DenseMatrix> = ids
        .iter()
        .map(|&id| params(model).grad(id).clone())
        .collect();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (k, &id) in ids.iter().enumerate() {
        let theta = params(model).value(id).as_slice().to_vec();
        let fd = fd_gradient(
            |t| {
                params(model)
                    .value_mut(id)
                    .as_mut_slice()
                    .copy_from_slice(t);
                loss(model)
            },
            &theta,
            FD_STEP,
        )
        .expect("finite loss");
        params(model)
            .value_mut(id)
            .as_mut_slice()
            .copy_from_slice(&theta);
        for (e, (&g, &f)) in analytic[k].as_slice().iter().zip(&fd).enumerate() {
            let err = relative_error(g, f);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!(
                    "{}[{e}] analytic {g:.6e} vs fd {f:.6e}",
                    params(model).name(id)
                );
            }
        }
    }
    report
}

/// Moves every bias off zero so that no relu sits exactly on its kink at
/// the checked point.
pub fn jitter_biases(params: &mut ParamSet, seed: u64) {
    let mut r = rng(seed ^ 0x5eed);
    let ids: Vec<_> = params
        .ids()
        .filter(|&id| params.name(id).ends_with(".b"))
        .collect();
    for id in ids {
        for v in params.value_mut(id).as_mut_slice() {
            *v += r.random_range(-0.2..0.2);
        }
    }
}
