//! Brute-force reference implementations used only by tests. Nothing here
//! calls the library's numerical kernels; inputs and outputs are plain
//! nested vectors.
#![allow(dead_code)]

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};

pub type Mat = Vec<Vec<f64>>;

/// Outcome of comparing a value against its oracle.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub values: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Central differences `(L(θ+h) − L(θ−h)) / 2h`, one coordinate at a time.
pub fn fd_gradient(
    mut loss: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
) -> Result<Vec<f64>, String> {
    if !(h > 0.0) {
        return Err(format!("step {h} must be positive"));
    }
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        point[i] = theta[i] + h;
        let up = loss(&point);
        point[i] = theta[i] - h;
        let down = loss(&point);
        point[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(format!("loss not finite around coordinate {i}"));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Below this magnitude gradients compare on an absolute scale. Central
/// differences at h = 1e-5 on an O(1) loss carry roundoff of roughly
/// 1e-11 to 1e-10, so a structurally zero gradient cannot be resolved more
/// finely than that.
pub const GRADIENT_FLOOR: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, GRADIENT_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADIENT_FLOOR)
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = if inner == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner, "inner dimensions differ");
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

/// `D̃^{-1/2}(A + λI)D̃^{-1/2}` evaluated entry by entry; rows of nodes with
/// zero degree stay zero.
pub fn dense_normalized_adjacency(a: &Mat, lambda: f64) -> Mat {
    let n = a.len();
    let tilde: Mat = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| a[i][j] + if i == j { lambda } else { 0.0 })
                .collect()
        })
        .collect();
    let deg: Vec<f64> = tilde.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if deg[i] == 0.0 || deg[j] == 0.0 {
                        0.0
                    } else {
                        tilde[i][j] / (deg[i] * deg[j]).sqrt()
                    }
                })
                .collect()
        })
        .collect()
}

fn to_na(m: &Mat) -> DMatrix<f64> {
    let rows = m.len();
    let cols = if rows == 0 { 0 } else { m[0].len() };
    DMatrix::from_fn(rows, cols, |i, j| m[i][j])
}

fn inv_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>, String> {
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err("covariance is singular".into());
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Top-`k` canonical correlations, i.e. singular values of
/// `Σ11^{-1/2} Σ12 Σ22^{-1/2}` with ridge `reg` on both view covariances.
pub fn exact_linear_cca(x1: &Mat, x2: &Mat, k: usize, reg: f64) -> Result<Vec<f64>, String> {
    let n = x1.len();
    if n != x2.len() || n < 2 {
        return Err("views need the same number (≥ 2) of rows".into());
    }
    let center = |x: &Mat| {
        let mut m = to_na(x);
        for mut col in m.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        m
    };
    let (c1, c2) = (center(x1), center(x2));
    let scale = 1.0 / (n as f64 - 1.0);
    let s11 = c1.transpose() * &c1 * scale + DMatrix::identity(c1.ncols(), c1.ncols()) * reg;
    let s22 = c2.transpose() * &c2 * scale + DMatrix::identity(c2.ncols(), c2.ncols()) * reg;
    let s12 = c1.transpose() * &c2 * scale;
    let t = inv_sqrt(s11)? * s12 * inv_sqrt(s22)?;
    let mut sv: Vec<f64> = t.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(k);
    Ok(sv)
}

/// For each node, the set of nodes within `hops` edges (itself included),
/// sorted ascending.
pub fn receptive_field(adjacency: &[Vec<usize>], hops: usize) -> Vec<Vec<usize>> {
    let n = adjacency.len();
    (0..n)
        .map(|s| {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if dist[u] == hops {
                    continue;
                }
                for &v in &adjacency[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            (0..n).filter(|&v| dist[v] != usize::MAX).collect()
        })
        .collect()
}

/// Newman modularity `Q = Σ_c [L_c/m − (d_c/2m)²]` of an undirected simple
/// graph given as an edge list.
pub fn modularity(n: usize, edges: &[(usize, usize)], community: &[usize]) -> f64 {
    let m = edges.len() as f64;
    let mut degree = vec![0.0; n];
    for &(a, b) in edges {
        degree[a] += 1.0;
        degree[b] += 1.0;
    }
    let k = community.iter().copied().max().map_or(0, |c| c + 1);
    let mut internal = vec![0.0; k];
    let mut total = vec![0.0; k];
    for &(a, b) in edges {
        if community[a] == community[b] {
            internal[community[a]] += 1.0;
        }
    }
    for v in 0..n {
        total[community[v]] += degree[v];
    }
    (0..k)
        .map(|c| internal[c] / m - (total[c] / (2.0 * m)).powi(2))
        .sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Exhaustive check of a discretisation: `members[c]` lists point indices
/// of class `c`, `representatives[c]` its (lat, lon). Returns a list of
/// violated properties (empty when everything holds).
pub fn verify_partition(
    points: &[(f64, f64)],
    bucket: usize,
    members: &[Vec<usize>],
    representatives: &[(f64, f64)],
) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen = vec![0usize; points.len()];
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() {
            problems.push(format!("class {c} is empty"));
            continue;
        }
        let distinct = m.iter().any(|&i| points[i] != points[m[0]]);
        if m.len() > bucket && distinct {
            problems.push(format!("class {c} has {} > {bucket} members", m.len()));
        }
        for &i in m {
            seen[i] += 1;
        }
        let lat = median(m.iter().map(|&i| points[i].0).collect());
        let lon = median(m.iter().map(|&i| points[i].1).collect());
        if (lat, lon) != representatives[c] {
            problems.push(format!(
                "class {c} representative {:?} ≠ median ({lat}, {lon})",
                representatives[c]
            ));
        }
    }
    for (i, &s) in seen.iter().enumerate() {
        if s != 1 {
            problems.push(format!("point {i} belongs to {s} classes"));
        }
    }
    problems
}

/// Great-circle distance, written independently of the library.
pub fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6371.0 * h.sqrt().min(1.0).asin()
}
