//! Clustering quality metrics.
//!
//! Labels are plain `i64` slices. For NMI and ARI the noise label `-1` is an
//! ordinary label; silhouette ignores noise points entirely.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::EmbeddingSet;
use crate::error::{Error, Result};
use crate::{cosine_distance, NOISE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub silhouette: Option<f64>,
    pub n_clusters_pred: usize,
    pub n_clusters_true: Option<usize>,
}

fn check_lengths(a: &[i64], b: &[i64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "label vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

struct Contingency {
    n: usize,
    rows: BTreeMap<i64, usize>,
    cols: BTreeMap<i64, usize>,
    cells: BTreeMap<(i64, i64), usize>,
}

fn contingency(a: &[i64], b: &[i64]) -> Contingency {
    let mut t = Contingency {
        n: a.len(),
        rows: BTreeMap::new(),
        cols: BTreeMap::new(),
        cells: BTreeMap::new(),
    };
    for (&x, &y) in a.iter().zip(b) {
        *t.rows.entry(x).or_default() += 1;
        *t.cols.entry(y).or_default() += 1;
        *t.cells.entry((x, y)).or_default() += 1;
    }
    t
}

fn entropy(counts: &BTreeMap<i64, usize>, n: usize) -> f64 {
    let n = n as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
///
/// Two single-label partitions score 1; if exactly one of them has a single
/// label the score is 0.
pub fn nmi(a: &[i64], b: &[i64]) -> Result<f64> {
    check_lengths(a, b)?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("NMI of empty labelings".into()));
    }
    let t = contingency(a, b);
    match (t.rows.len() == 1, t.cols.len() == 1) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let ha = entropy(&t.rows, t.n);
    let hb = entropy(&t.cols, t.n);
    let n = t.n as f64;
    let mi: f64 = t
        .cells
        .iter()
        .map(|(&(x, y), &c)| {
            let c = c as f64;
            let ra = t.rows[&x] as f64;
            let cb = t.cols[&y] as f64;
            c / n * (n * c / (ra * cb)).ln()
        })
        .sum();
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}

fn comb2(x: usize) -> i128 {
    let x = x as i128;
    x * (x - 1) / 2
}

/// Adjusted Rand index from the contingency table.
///
/// Evaluated as `2 (I·P - A·B) / ((A + B)·P - 2 A·B)` in integers, where
/// `P = C(N, 2)`, `I` sums `C(n_ij, 2)` and `A`, `B` sum the marginals, so
/// rational values such as -1/2 come out exact. Degenerate tables (both
/// labelings trivial in the same way) score 1.
pub fn ari(a: &[i64], b: &[i64]) -> Result<f64> {
    check_lengths(a, b)?;
    if a.len() < 2 {
        return Err(Error::InvalidArgument("ARI needs at least 2 points".into()));
    }
    let t = contingency(a, b);
    let index: i128 = t.cells.values().map(|&c| comb2(c)).sum();
    let sum_a: i128 = t.rows.values().map(|&c| comb2(c)).sum();
    let sum_b: i128 = t.cols.values().map(|&c| comb2(c)).sum();
    let pairs = comb2(t.n);
    let num = 2 * (index * pairs - sum_a * sum_b);
    let den = (sum_a + sum_b) * pairs - 2 * sum_a * sum_b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Dense symmetric cosine-distance matrix, row-major.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn cosine(emb: &EmbeddingSet) -> Self {
        let n = emb.len();
        let vs = emb.vectors();
        let data: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let vs = &vs;
                (0..n).map(move |j| if i == j { 0.0 } else { cosine_distance(vs[i], vs[j]) })
            })
            .collect();
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Mean silhouette over non-noise points using cosine distance.
pub fn silhouette(emb: &EmbeddingSet, labels: &[i64]) -> Result<f64> {
    if emb.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} embeddings but {} labels",
            emb.len(),
            labels.len()
        )));
    }
    silhouette_with(&DistanceMatrix::cosine(emb), labels)
}

/// Silhouette against a precomputed distance matrix.
///
/// Points alone in their cluster score 0, as does any point whose `a` and
/// `b` are both zero.
pub fn silhouette_with(dist: &DistanceMatrix, labels: &[i64]) -> Result<f64> {
    if dist.len() != labels.len() {
        return Err(Error::DimensionMismatch("distance matrix vs labels".into()));
    }
    let mut clusters: BTreeMap<i64, usize> = BTreeMap::new();
    for &l in labels.iter().filter(|&&l| l != NOISE) {
        let next = clusters.len();
        clusters.entry(l).or_insert(next);
    }
    let k = clusters.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "silhouette needs >= 2 clusters, found {k}"
        )));
    }
    let slot: Vec<Option<usize>> = labels.iter().map(|l| clusters.get(l).copied()).collect();
    let mut sizes = vec![0usize; k];
    for c in slot.iter().flatten() {
        sizes[*c] += 1;
    }
    let scores: Vec<f64> = (0..labels.len())
        .into_par_iter()
        .filter_map(|i| {
            let own = slot[i]?;
            if sizes[own] == 1 {
                return Some(0.0);
            }
            let mut sums = vec![0.0; k];
            for (j, d) in dist.row(i).iter().enumerate() {
                if let Some(c) = slot[j] {
                    if j != i {
                        sums[c] += d;
                    }
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            Some(if denom > 0.0 { (b - a) / denom } else { 0.0 })
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Number of distinct non-noise labels.
pub fn count_clusters(labels: &[i64]) -> usize {
    let mut seen: Vec<i64> = labels.iter().copied().filter(|&l| l != NOISE).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}
