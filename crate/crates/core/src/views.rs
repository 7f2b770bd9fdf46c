//! The two input views: a tf-idf bag-of-words matrix over user text and the
//! normalised collapsed @-mention graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SparseMatrix;

/// Splits on whitespace. Tokens starting with `@` are returned as mentions
/// (without the `@` and trailing punctuation); everything else is a
/// lowercased term.
pub fn tokenize(text: &str) -> (Vec<String>, Vec<String>) {
    let mut terms = Vec::new();
    let mut mentions = Vec::new();
    for tok in text.split_whitespace() {
        if let Some(handle) = tok.strip_prefix('@') {
            let handle = handle.trim_end_matches(|c: char| !(c.is_alphanumeric() || c == '_'));
            if !handle.is_empty() {
                mentions.push(handle.to_string());
            }
            continue;
        }
        terms.push(tok.to_lowercase());
    }
    (terms, mentions)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    /// Terms in fewer documents are dropped.
    pub min_df: usize,
    /// Terms in more than this fraction of documents are dropped.
    pub max_df_ratio: f64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_df: 2,
            max_df_ratio: 0.5,
        }
    }
}

impl VocabConfig {
    /// Keeps every term that occurs at least once.
    pub fn unpruned() -> Self {
        Self {
            min_df: 1,
            max_df_ratio: 1.0,
        }
    }
}

/// Term → column mapping with document frequencies.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<usize>,
    n_docs: usize,
}

impl Vocabulary {
    /// Fits over all documents; columns are assigned in lexicographic term
    /// order.
    pub fn fit<S: AsRef<str>>(docs: &[Vec<S>], config: &VocabConfig) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let uniq: BTreeSet<&str> = doc.iter().map(AsRef::as_ref).collect();
            for t in uniq {
                *counts.entry(t).or_default() += 1;
            }
        }
        let n_docs = docs.len();
        let max_df = config.max_df_ratio * n_docs as f64;
        let mut terms = Vec::new();
        let mut df = Vec::new();
        for (t, c) in counts {
            if c >= config.min_df.max(1) && c as f64 <= max_df {
                terms.push(t.to_string());
                df.push(c);
            }
        }
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            terms,
            index,
            df,
            n_docs,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn df(&self, i: usize) -> usize {
        self.df[i]
    }

    /// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1`.
    pub fn idf(&self, i: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.df[i] as f64)).ln() + 1.0
    }
}

/// Binary-tf × idf rows, each scaled to unit l2 norm. Documents with no
/// in-vocabulary term give an all-zero row.
pub fn build_text_view<S: AsRef<str>>(docs: &[Vec<S>], vocab: &Vocabulary) -> SparseMatrix {
    let mut triplets = Vec::new();
    for (r, doc) in docs.iter().enumerate() {
        let cols: BTreeSet<usize> = doc
            .iter()
            .filter_map(|t| vocab.index_of(t.as_ref()))
            .collect();
        let norm = cols
            .iter()
            .map(|&c| vocab.idf(c).powi(2))
            .sum::<f64>()
            .sqrt();
        triplets.extend(cols.into_iter().map(|c| (r, c, vocab.idf(c) / norm)));
    }
    SparseMatrix::from_triplets(docs.len(), vocab.len(), triplets).expect("indices in range")
}

#[derive(Clone, Debug)]
pub struct MentionGraph {
    /// Binary, symmetric, zero diagonal.
    pub adjacency: SparseMatrix,
    /// Handles skipped for the co-mention rule because too many users
    /// mention them.
    pub skipped_handles: usize,
    /// Pairs whose source is not a known user.
    pub dropped_pairs: usize,
}

/// Collapsed mention graph: users `u`, `v` are linked if either mentions the
/// other or both mention a common handle. Handles mentioned by more than
/// `max_comention_degree` distinct users do not create co-mention links.
pub fn build_mention_graph(
    mentions: &[(String, String)],
    users: &HashMap<String, usize>,
    n_users: usize,
    max_comention_degree: usize,
) -> Result<MentionGraph> {
    if let Some((id, &i)) = users.iter().find(|(_, &i)| i >= n_users) {
        return Err(Error::Argument(format!(
            "user {id} has index {i} ≥ {n_users}"
        )));
    }
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut mentioned_by: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    let mut dropped_pairs = 0;
    let mut link = |a: usize, b: usize| {
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    };
    for (src, handle) in mentions {
        let Some(&u) = users.get(src) else {
            dropped_pairs += 1;
            continue;
        };
        if let Some(&v) = users.get(handle) {
            link(u, v);
        }
        mentioned_by.entry(handle.as_str()).or_default().insert(u);
    }
    let mut skipped_handles = 0;
    for group in mentioned_by.values() {
        if group.len() > max_comention_degree {
            skipped_handles += 1;
            continue;
        }
        let members: Vec<usize> = group.iter().copied().collect();
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                link(a, b);
            }
        }
    }
    if skipped_handles > 0 {
        log::info!("co-mention cap skipped {skipped_handles} handles");
    }
    let triplets = edges.iter().flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)]);
    Ok(MentionGraph {
        adjacency: SparseMatrix::from_triplets(n_users, n_users, triplets)?,
        skipped_handles,
        dropped_pairs,
    })
}

#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    pub matrix: SparseMatrix,
    /// Rows left empty because the node had degree zero (only when λ = 0).
    pub zero_rows: usize,
}

/// `D̃^{-1/2}(A + λI)D̃^{-1/2}` where `D̃` holds the row sums of `A + λI`.
pub fn normalize_adjacency(a: &SparseMatrix, lambda: f64) -> Result<NormalizedAdjacency> {
    if a.rows() != a.cols() {
        return Err(Error::dim(
            "normalize_adjacency",
            format!("{:?}", a.shape()),
        ));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Argument(format!(
            "self-loop weight {lambda} must be ≥ 0"
        )));
    }
    if a.iter().any(|(_, _, v)| v < 0.0) || !a.is_symmetric() {
        return Err(Error::Argument(
            "adjacency must be symmetric and non-negative".into(),
        ));
    }
    let n = a.rows();
    let degree: Vec<f64> = (0..n)
        .map(|i| a.row(i).map(|(_, v)| v).sum::<f64>() + lambda)
        .collect();
    let mut triplets = Vec::with_capacity(a.nnz() + n);
    let mut zero_rows = 0;
    for (i, &di) in degree.iter().enumerate() {
        if di == 0.0 {
            zero_rows += 1;
            continue;
        }
        for (j, v) in a.row(i) {
            triplets.push((i, j, v / (di * degree[j]).sqrt()));
        }
        if lambda > 0.0 {
            triplets.push((i, i, lambda / (di * di).sqrt()));
        }
    }
    if zero_rows > 0 {
        log::warn!("{zero_rows} isolated nodes left with empty rows (λ = 0)");
    }
    Ok(NormalizedAdjacency {
        matrix: SparseMatrix::from_triplets(n, n, triplets)?,
        zero_rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    pub vocab: VocabConfig,
    pub lambda: f64,
    pub max_comention_degree: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            vocab: VocabConfig::default(),
            lambda: 1.0,
            max_comention_degree: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ViewStats {
    pub users: usize,
    pub vocabulary: usize,
    pub edges: usize,
    pub isolated: usize,
    pub skipped_handles: usize,
}

impl fmt::Display for ViewStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users={} |V|={} edges={} isolated={} skipped_handles={}",
            self.users, self.vocabulary, self.edges, self.isolated, self.skipped_handles
        )
    }
}

/// Text matrix `X`, binary graph `A` and its normalisation `Â`.
#[derive(Clone, Debug)]
pub struct ViewMatrices {
    pub x: Arc<SparseMatrix>,
    pub a: SparseMatrix,
    pub a_hat: Arc<SparseMatrix>,
    pub lambda: f64,
    pub vocabulary: Vocabulary,
    pub stats: ViewStats,
}

impl ViewMatrices {
    /// Builds both views for users given as `(id, text)`. Mentions found in
    /// the text are merged with the explicit `mentions` pairs.
    pub fn build(
        users: &[(&str, &str)],
        mentions: &[(String, String)],
        config: &ViewConfig,
    ) -> Result<Self> {
        let index: HashMap<String, usize> = users
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.to_string(), i))
            .collect();
        if index.len() != users.len() {
            return Err(Error::Argument("duplicate user ids".into()));
        }
        let mut docs = Vec::with_capacity(users.len());
        let mut all_mentions = mentions.to_vec();
        for (id, text) in users {
            let (terms, handles) = tokenize(text);
            all_mentions.extend(handles.into_iter().map(|h| (id.to_string(), h)));
            docs.push(terms);
        }
        let vocabulary = Vocabulary::fit(&docs, &config.vocab);
        let x = build_text_view(&docs, &vocabulary);
        let graph = build_mention_graph(
            &all_mentions,
            &index,
            users.len(),
            config.max_comention_degree,
        )?;
        let a = graph.adjacency;
        let norm = normalize_adjacency(&a, config.lambda)?;
        let isolated = (0..a.rows()).filter(|&i| a.row_nnz(i) == 0).count();
        let stats = ViewStats {
            users: users.len(),
            vocabulary: vocabulary.len(),
            edges: a.nnz() / 2,
            isolated,
            skipped_handles: graph.skipped_handles,
        };
        Ok(Self {
            x: Arc::new(x),
            a,
            a_hat: Arc::new(norm.matrix),
            lambda: config.lambda,
            vocabulary,
            stats,
        })
    }

    pub fn num_users(&self) -> usize {
        self.a.rows()
    }
}
