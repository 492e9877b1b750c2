//! Partitions, resolution-scaled modularity and the Leiden algorithm.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WeightedKnnGraph;
use crate::rng::{self, SeededRng};
use crate::NOISE;

/// Cluster labels `0..n_clusters` plus [`NOISE`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<i64>,
    n_clusters: usize,
}

impl Partition {
    /// Accept labels that already use the contiguous range `0..C` (plus noise).
    pub fn new(labels: Vec<i64>) -> Result<Self> {
        let max = labels.iter().copied().max().unwrap_or(NOISE);
        let mut present = vec![false; (max + 1).max(0) as usize];
        for &l in &labels {
            if l < NOISE {
                return Err(Error::InvalidArgument(format!("invalid label {l}")));
            }
            if l >= 0 {
                present[l as usize] = true;
            }
        }
        if present.iter().any(|p| !p) {
            return Err(Error::InvalidArgument(
                "non-noise labels must form a contiguous range starting at 0".into(),
            ));
        }
        Ok(Self {
            n_clusters: present.len(),
            labels,
        })
    }

    /// Relabel arbitrary ids: negative values become noise, clusters are
    /// numbered by decreasing size with ties going to the cluster whose
    /// first member comes first.
    pub fn canonical(raw: &[i64]) -> Self {
        let mut groups: Vec<(i64, usize, usize)> = Vec::new(); // (raw, size, first)
        let mut slot = std::collections::HashMap::new();
        for (i, &l) in raw.iter().enumerate() {
            if l < 0 {
                continue;
            }
            let idx = *slot.entry(l).or_insert_with(|| {
                groups.push((l, 0, i));
                groups.len() - 1
            });
            groups[idx].1 += 1;
        }
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by(|&a, &b| groups[b].1.cmp(&groups[a].1).then(groups[a].2.cmp(&groups[b].2)));
        let mut new_label = std::collections::HashMap::new();
        for (rank, &g) in order.iter().enumerate() {
            new_label.insert(groups[g].0, rank as i64);
        }
        Self {
            labels: raw
                .iter()
                .map(|l| if *l < 0 { NOISE } else { new_label[l] })
                .collect(),
            n_clusters: groups.len(),
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            labels: (0..n as i64).collect(),
            n_clusters: n,
        }
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<i64> {
        self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_clusters];
        for &l in &self.labels {
            if l >= 0 {
                s[l as usize] += 1;
            }
        }
        s
    }

    /// Member indices of each cluster, in index order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.n_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                m[l as usize].push(i);
            }
        }
        m
    }
}

/// `Q_γ = 1/(2m) Σ_ij [A_ij - γ k_i k_j / (2m)] δ(c_i, c_j)`. Noise nodes
/// count as singleton communities.
pub fn modularity(g: &WeightedKnnGraph, p: &Partition, gamma: f64) -> Result<f64> {
    modularity_of_labels(g, p.labels(), gamma)
}

pub(crate) fn modularity_of_labels(g: &WeightedKnnGraph, labels: &[i64], gamma: f64) -> Result<f64> {
    let n = g.n_nodes();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} nodes, graph has {n}",
            labels.len()
        )));
    }
    let degrees: Vec<f64> = (0..n).map(|i| g.degree(i)).collect();
    let two_m: f64 = degrees.iter().sum();
    if !(two_m > 0.0) {
        return Err(Error::InvalidArgument("modularity of a graph without edges".into()));
    }
    // noise nodes get private community ids past the largest label
    let base = labels.iter().copied().max().unwrap_or(0).max(0) + 1;
    let comm: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| if l < 0 { (base + i as i64) as usize } else { l as usize })
        .collect();
    let size = comm.iter().copied().max().unwrap_or(0) + 1;
    let mut internal = vec![0.0; size];
    let mut total = vec![0.0; size];
    for i in 0..n {
        total[comm[i]] += degrees[i];
        for &(j, w) in g.neighbors(i) {
            if comm[j] == comm[i] {
                internal[comm[i]] += w;
            }
        }
    }
    let q: f64 = internal
        .iter()
        .zip(&total)
        .map(|(a, t)| a - gamma * t * t / two_m)
        .sum();
    Ok(q / two_m)
}

pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
/// Randomness of refinement merges, `Pr ∝ exp(ΔQ / θ)`.
const REFINE_THETA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeidenConfig {
    pub gamma: f64,
    pub seed: u64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl LeidenConfig {
    pub fn new(gamma: f64, seed: u64) -> Self {
        Self {
            gamma,
            seed,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Leiden output with the modularity recorded after every local-moving
/// phase.
#[derive(Debug, Clone)]
pub struct LeidenRun {
    pub partition: Partition,
    pub modularity: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
}

pub fn leiden(g: &WeightedKnnGraph, gamma: f64, seed: u64) -> Result<Partition> {
    Ok(leiden_run(g, &LeidenConfig::new(gamma, seed))?.partition)
}

/// Run Leiden iterations (local moving, refinement, aggregation) until an
/// iteration improves `Q_γ` by less than the tolerance. Communities are
/// returned in canonical order and are always connected.
pub fn leiden_run(g: &WeightedKnnGraph, cfg: &LeidenConfig) -> Result<LeidenRun> {
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be > 0, got {}", cfg.gamma)));
    }
    let n = g.n_nodes();
    if n == 0 {
        return Ok(LeidenRun {
            partition: Partition::singletons(0),
            modularity: 0.0,
            trace: Vec::new(),
            iterations: 0,
        });
    }
    let base = AggGraph::from_graph(g);
    if !(base.two_m > 0.0) {
        return Ok(LeidenRun {
            partition: Partition::singletons(n),
            modularity: 0.0,
            trace: Vec::new(),
            iterations: 0,
        });
    }
    let mut rng = rng::seeded(cfg.seed);
    let mut labels: Vec<usize> = (0..n).collect();
    let mut quality = base.quality(&labels, cfg.gamma);
    let mut trace = vec![quality];
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let next = leiden_iteration(&base, &labels, cfg.gamma, &mut rng, &mut trace);
        let q = base.quality(&next, cfg.gamma);
        let improved = q - quality;
        if improved >= 0.0 {
            labels = next;
            quality = q;
        }
        if improved < cfg.tolerance {
            break;
        }
    }
    let labels = split_disconnected(&base, &labels);
    let raw: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
    let partition = Partition::canonical(&raw);
    let modularity = modularity(g, &partition, cfg.gamma)?;
    Ok(LeidenRun {
        partition,
        modularity,
        trace,
        iterations,
    })
}

/// Graph with node weights (degrees) and self-loops, as produced by
/// aggregation.
#[derive(Debug, Clone)]
struct AggGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    degree: Vec<f64>,
    two_m: f64,
}

impl AggGraph {
    fn from_graph(g: &WeightedKnnGraph) -> Self {
        let n = g.n_nodes();
        let adj: Vec<Vec<(usize, f64)>> = (0..n).map(|i| g.neighbors(i).to_vec()).collect();
        let degree: Vec<f64> = adj.iter().map(|l| l.iter().map(|e| e.1).sum()).collect();
        Self {
            two_m: degree.iter().sum(),
            adj,
            self_loop: vec![0.0; n],
            degree,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn quality(&self, labels: &[usize], gamma: f64) -> f64 {
        let size = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut internal = vec![0.0; size];
        let mut total = vec![0.0; size];
        for v in 0..self.len() {
            let c = labels[v];
            total[c] += self.degree[v];
            internal[c] += self.self_loop[v];
            for &(u, w) in &self.adj[v] {
                if labels[u] == c {
                    internal[c] += w;
                }
            }
        }
        internal
            .iter()
            .zip(&total)
            .map(|(a, t)| a - gamma * t * t / self.two_m)
            .sum::<f64>()
            / self.two_m
    }

    /// Collapse each community of `labels` (dense `0..C`) into one node.
    fn aggregate(&self, labels: &[usize], count: usize) -> AggGraph {
        let mut degree = vec![0.0; count];
        let mut self_loop = vec![0.0; count];
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); count];
        for v in 0..self.len() {
            let c = labels[v];
            degree[c] += self.degree[v];
            self_loop[c] += self.self_loop[v];
            for &(u, w) in &self.adj[v] {
                let d = labels[u];
                if d == c {
                    self_loop[c] += w;
                } else {
                    adj[c].push((d, w));
                }
            }
        }
        for list in &mut adj {
            list.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(list.len());
            for &(d, w) in list.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == d => last.1 += w,
                    _ => merged.push((d, w)),
                }
            }
            *list = merged;
        }
        AggGraph {
            adj,
            self_loop,
            degree,
            two_m: self.two_m,
        }
    }
}

/// One Leiden iteration starting from `init` (labels on base nodes).
fn leiden_iteration(
    base: &AggGraph,
    init: &[usize],
    gamma: f64,
    rng: &mut SeededRng,
    trace: &mut Vec<f64>,
) -> Vec<usize> {
    let mut graph = base.clone();
    let mut node_of: Vec<usize> = (0..base.len()).collect();
    let (mut comm, _) = densify(init);
    loop {
        move_nodes_fast(&graph, &mut comm, gamma, rng);
        let flat: Vec<usize> = node_of.iter().map(|&a| comm[a]).collect();
        trace.push(base.quality(&flat, gamma));
        let (dense, n_comm) = densify(&comm);
        comm = dense;
        if n_comm == graph.len() {
            return flat;
        }
        let mut refined = refine(&graph, &comm, gamma, rng);
        let (r, mut n_ref) = densify(&refined);
        refined = r;
        if n_ref == graph.len() {
            refined = comm.clone();
            n_ref = n_comm;
        }
        let next = graph.aggregate(&refined, n_ref);
        let mut next_comm = vec![0; n_ref];
        for v in 0..graph.len() {
            next_comm[refined[v]] = comm[v];
        }
        for a in node_of.iter_mut() {
            *a = refined[*a];
        }
        graph = next;
        comm = next_comm;
    }
}

/// Renumber labels to `0..C` in order of first appearance.
fn densify(labels: &[usize]) -> (Vec<usize>, usize) {
    let size = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut map = vec![usize::MAX; size];
    let mut next = 0;
    let out = labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect();
    (out, next)
}

/// Queue-based local moving: each node goes to the neighbouring (or an
/// empty) community with the largest strictly positive modularity gain.
fn move_nodes_fast(g: &AggGraph, comm: &mut [usize], gamma: f64, rng: &mut SeededRng) {
    let n = g.len();
    let mut tot = vec![0.0; n];
    let mut members = vec![0usize; n];
    for v in 0..n {
        tot[comm[v]] += g.degree[v];
        members[comm[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).rev().filter(|&c| members[c] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into_iter().collect();
    let mut queued = vec![true; n];
    let mut w_to = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let scale = gamma / g.two_m;

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let old = comm[v];
        let kv = g.degree[v];
        for &(u, w) in &g.adj[v] {
            let c = comm[u];
            if w_to[c] == 0.0 {
                touched.push(c);
            }
            w_to[c] += w;
        }
        tot[old] -= kv;
        members[old] -= 1;

        let mut best = old;
        let mut best_gain = w_to[old] - scale * kv * tot[old];
        for &c in &touched {
            let gain = w_to[c] - scale * kv * tot[c];
            if gain > best_gain {
                best = c;
                best_gain = gain;
            }
        }
        if best_gain < 0.0 && members[old] > 0 {
            if let Some(e) = empty.pop() {
                best = e;
            }
        }
        for &c in &touched {
            w_to[c] = 0.0;
        }
        touched.clear();
        if members[old] == 0 && best != old {
            empty.push(old);
        }
        tot[best] += kv;
        members[best] += 1;
        comm[v] = best;
        if best != old {
            for &(u, _) in &g.adj[v] {
                if !queued[u] && comm[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
}

/// Refine each community of `comm` starting from singletons: a still-single
/// node merges into a well-connected sub-community of its parent with
/// probability proportional to `exp(ΔQ / θ)` over non-negative gains.
fn refine(g: &AggGraph, comm: &[usize], gamma: f64, rng: &mut SeededRng) -> Vec<usize> {
    let n = g.len();
    let scale = gamma / g.two_m;
    let n_comm = comm.iter().copied().max().map_or(0, |m| m + 1);
    let mut comm_tot = vec![0.0; n_comm];
    let mut by_comm: Vec<Vec<usize>> = vec![Vec::new(); n_comm];
    for v in 0..n {
        comm_tot[comm[v]] += g.degree[v];
        by_comm[comm[v]].push(v);
    }
    let mut refined: Vec<usize> = (0..n).collect();
    let mut r_tot = g.degree.clone();
    let mut r_size = vec![1usize; n];
    // weight from each refined community to the rest of its parent
    let mut r_ext: Vec<f64> = (0..n)
        .map(|v| {
            g.adj[v]
                .iter()
                .filter(|e| comm[e.0] == comm[v])
                .map(|e| e.1)
                .sum()
        })
        .collect();
    let mut w_to = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    for nodes in by_comm.iter_mut() {
        nodes.shuffle(rng);
        let Some(&first) = nodes.first() else { continue };
        let s_tot = comm_tot[comm[first]];
        for &v in nodes.iter() {
            if r_size[refined[v]] != 1 {
                continue;
            }
            let kv = g.degree[v];
            if r_ext[v] < scale * kv * (s_tot - kv) {
                continue;
            }
            for &(u, w) in &g.adj[v] {
                if comm[u] != comm[v] {
                    continue;
                }
                let c = refined[u];
                if w_to[c] == 0.0 {
                    touched.push(c);
                }
                w_to[c] += w;
            }
            let own = refined[v];
            let mut cands: Vec<(usize, f64)> = vec![(own, 0.0)];
            for &c in &touched {
                if c == own {
                    continue;
                }
                let well_connected = r_ext[c] >= scale * r_tot[c] * (s_tot - r_tot[c]);
                let gain = (w_to[c] - scale * kv * r_tot[c]) / (g.two_m / 2.0);
                if well_connected && gain >= 0.0 {
                    cands.push((c, gain));
                }
            }
            let target = if cands.len() == 1 {
                own
            } else {
                let max = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = cands
                    .iter()
                    .map(|c| ((c.1 - max) / REFINE_THETA).exp())
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut draw = rng.random::<f64>() * total;
                let mut pick = cands[cands.len() - 1].0;
                for (c, w) in cands.iter().zip(&weights) {
                    if draw < *w {
                        pick = c.0;
                        break;
                    }
                    draw -= w;
                }
                pick
            };
            if target != own {
                let w_vc = w_to[target];
                r_ext[target] += r_ext[v] - 2.0 * w_vc;
                r_tot[target] += kv;
                r_size[target] += 1;
                r_tot[own] = 0.0;
                r_size[own] = 0;
                refined[v] = target;
            }
            for &c in &touched {
                w_to[c] = 0.0;
            }
            touched.clear();
        }
    }
    refined
}

/// Split any community that is not connected in the base graph.
fn split_disconnected(g: &AggGraph, labels: &[usize]) -> Vec<usize> {
    let n = g.len();
    let mut out = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if out[s] != usize::MAX {
            continue;
        }
        out[s] = next;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for &(u, _) in &g.adj[v] {
                if out[u] == usize::MAX && labels[u] == labels[s] {
                    out[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    out
}
