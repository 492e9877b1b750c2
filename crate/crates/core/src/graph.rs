//! Weighted k-nearest-neighbour graphs over unit embeddings.
//!
//! Directed neighbours are ranked by ascending cosine distance (ties by
//! ascending id), weighted `exp(sim / σ)` with `sim = 1 - d_cos`, and the
//! graph is symmetrized by keeping the larger of the two directed weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::Partition;
use crate::dynamics::{self, FeatureMap};
use crate::embedder::EmbeddingSet;
use crate::error::{Error, Result};
use crate::cosine_distance;

pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_BEHAVIOR_ALPHA: f64 = 0.3;

/// Sparse symmetric weighted graph. Adjacency lists are sorted by neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedKnnGraph {
    ids: Vec<String>,
    adjacency: Vec<Vec<(usize, f64)>>,
    /// Neighbour count used at construction; 0 for graphs built from edges.
    pub k: usize,
    pub sigma: f64,
}

/// Debug dump `{"n": .., "edges": [[i, j, w], ..]}` with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl WeightedKnnGraph {
    /// Build from an undirected edge list; duplicate edges keep the larger
    /// weight. Node ids are `"0".."n-1"`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::from_edges_with_ids(ids, edges)
    }

    pub fn from_edges_with_ids(ids: Vec<String>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let n = ids.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("edge ({i}, {j}) out of range")));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self-edge on node {i}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("edge ({i}, {j}) has weight {w}")));
            }
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for list in &mut adjacency {
            merge_max(list);
        }
        Ok(Self {
            ids,
            adjacency,
            k: 0,
            sigma: 0.0,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let list = &self.adjacency[i];
        list.binary_search_by_key(&j, |e| e.0).ok().map(|p| list[p].1)
    }

    /// Undirected edges `(i, j, w)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |e| e.0 > i).map(move |&(j, w)| (i, j, w)))
            .collect()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Weighted degree `k_i = Σ_j A_ij`.
    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency[i].iter().map(|e| e.1).sum()
    }

    /// Total edge weight `m = ½ Σ_ij A_ij`.
    pub fn total_weight(&self) -> f64 {
        self.edges().iter().map(|e| e.2).sum()
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            n: self.n_nodes(),
            edges: self.edges(),
        }
    }

    /// Induced subgraph on `nodes`, renumbered in the given order.
    pub fn subgraph(&self, nodes: &[usize]) -> Self {
        let mut index = vec![usize::MAX; self.n_nodes()];
        for (new, &old) in nodes.iter().enumerate() {
            index[old] = new;
        }
        let adjacency = nodes
            .iter()
            .map(|&old| {
                self.adjacency[old]
                    .iter()
                    .filter(|e| index[e.0] != usize::MAX)
                    .map(|&(j, w)| (index[j], w))
                    .collect::<Vec<_>>()
            })
            .map(|mut l| {
                l.sort_by_key(|e| e.0);
                l
            })
            .collect();
        Self {
            ids: nodes.iter().map(|&i| self.ids[i].clone()).collect(),
            adjacency,
            k: self.k,
            sigma: self.sigma,
        }
    }
}

fn merge_max(list: &mut Vec<(usize, f64)>) {
    list.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
    list.dedup_by_key(|e| e.0);
}

/// Per-node neighbour rankings, computed once and truncated to any `k`
/// up to the depth it was built with.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    ids: Vec<String>,
    /// `(neighbour, cosine distance)` sorted by distance then id.
    ranked: Vec<Vec<(usize, f64)>>,
}

impl KnnIndex {
    pub fn build(emb: &EmbeddingSet, depth: usize) -> Result<Self> {
        let n = emb.len();
        if depth == 0 || depth >= n {
            return Err(Error::InvalidArgument(format!(
                "k must satisfy 1 <= k < N, got k = {depth} with N = {n}"
            )));
        }
        let ids: Vec<String> = emb.ids().iter().map(|s| s.to_string()).collect();
        let vs = emb.vectors();
        let ranked = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut cands: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, cosine_distance(vs[i], vs[j])))
                    .collect();
                let by = |a: &(usize, f64), b: &(usize, f64)| {
                    a.1.total_cmp(&b.1).then_with(|| ids[a.0].cmp(&ids[b.0]))
                };
                if depth < cands.len() {
                    cands.select_nth_unstable_by(depth - 1, by);
                    cands.truncate(depth);
                }
                cands.sort_by(by);
                cands
            })
            .collect();
        Ok(Self { ids, ranked })
    }

    pub fn depth(&self) -> usize {
        self.ranked.first().map_or(0, Vec::len)
    }

    pub fn n_nodes(&self) -> usize {
        self.ranked.len()
    }

    pub fn graph(&self, k: usize, sigma: f64) -> Result<WeightedKnnGraph> {
        if k == 0 || k > self.depth() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} outside 1..={}",
                self.depth()
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
        }
        let n = self.n_nodes();
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, list) in self.ranked.iter().enumerate() {
            for &(j, d) in &list[..k] {
                let w = ((1.0 - d) / sigma).exp();
                adjacency[i].push((j, w));
                adjacency[j].push((i, w));
            }
        }
        for list in &mut adjacency {
            merge_max(list);
        }
        Ok(WeightedKnnGraph {
            ids: self.ids.clone(),
            adjacency,
            k,
            sigma,
        })
    }
}

pub fn build_knn_graph(emb: &EmbeddingSet, k: usize, sigma: f64) -> Result<WeightedKnnGraph> {
    KnnIndex::build(emb, k)?.graph(k, sigma)
}

/// Connected components labelled `0..C-1` by decreasing size, ties broken
/// by smallest member.
pub fn connected_components(g: &WeightedKnnGraph) -> Partition {
    let n = g.n_nodes();
    let mut uf = UnionFind::new(n);
    for (i, list) in g.adjacency.iter().enumerate() {
        for &(j, _) in list {
            uf.union(i, j);
        }
    }
    let roots: Vec<i64> = (0..n).map(|i| uf.find(i) as i64).collect();
    Partition::canonical(&roots)
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Scale every edge by `1 + α (2 b_ij - 1)` where `b_ij` is the behavioral
/// similarity of standardized features. `sigma_b = None` uses the median
/// heuristic.
pub fn reweight_edges(
    g: &WeightedKnnGraph,
    feats: &FeatureMap,
    alpha: f64,
    sigma_b: Option<f64>,
) -> Result<WeightedKnnGraph> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let ids: Vec<&str> = g.ids.iter().map(String::as_str).collect();
    let aligned = dynamics::align_features(&ids, feats)?;
    let z = dynamics::standardize(&aligned);
    let sigma_b = match sigma_b {
        Some(s) => s,
        None => dynamics::median_bandwidth(&z, 0),
    };
    let mut out = g.clone();
    for (i, list) in out.adjacency.iter_mut().enumerate() {
        for (j, w) in list.iter_mut() {
            let b = dynamics::feature_similarity(&z[i], &z[*j], sigma_b)?;
            *w *= reweight_factor(alpha, b);
        }
    }
    Ok(out)
}

/// The bracket `1 + α (2 b - 1)`: above 1 when `b > 0.5`, below when `b < 0.5`.
pub fn reweight_factor(alpha: f64, b: f64) -> f64 {
    1.0 + alpha * (2.0 * b - 1.0)
}
