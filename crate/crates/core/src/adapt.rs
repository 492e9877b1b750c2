//! Cluster registries and two-stage adaptation: recovery of the baseline
//! clusters on seen data, then anchored assignment of an online stream with
//! sub-clustering of whatever falls outside every anchor.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::Partition;
use crate::embedder::{l2_normalize, EmbeddingSet};
use crate::error::{Error, Result};
use crate::sweep::{self, SweepConfig};
use crate::{cosine_distance, jsonl, NOISE};

pub const DEFAULT_THETA: f64 = 0.1;
/// Tighter threshold for manifold-like data.
pub const MANIFOLD_THETA: f64 = 0.05;
pub const DEFAULT_EXPANSION: f64 = 1.2;
/// Anchors with a zero radius still capture exact re-encounters.
pub const RADIUS_FLOOR: f64 = 1e-3;
pub const RADIUS_QUANTILE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: usize,
    pub centroid: Vec<f64>,
    pub radius: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRegistry {
    pub clusters: Vec<RegistryEntry>,
}

impl ClusterRegistry {
    pub fn load(path: &Path) -> Result<Self> {
        let reg: Self = jsonl::read_json(path)?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_json(path, self)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::InvalidArgument("registry has no clusters".into()));
        }
        let dim = self.clusters[0].centroid.len();
        for c in &self.clusters {
            if c.centroid.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "registry centroid {} has dimension {}, expected {dim}",
                    c.id,
                    c.centroid.len()
                )));
            }
            if !(c.radius >= 0.0) || c.centroid.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("registry cluster {}", c.id)));
            }
        }
        Ok(())
    }

    /// Nearest anchor by cosine distance, ties to the lower id.
    pub fn nearest(&self, z: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.clusters.iter().enumerate() {
            let d = cosine_distance(z, &c.centroid);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Unit centroid, 95th-percentile cosine radius and size of every cluster.
pub fn build_registry(emb: &EmbeddingSet, p: &Partition) -> Result<ClusterRegistry> {
    if p.len() != emb.len() {
        return Err(Error::DimensionMismatch(format!(
            "partition has {} labels for {} embeddings",
            p.len(),
            emb.len()
        )));
    }
    if p.n_clusters() == 0 {
        return Err(Error::NoValidPartition("partition is all noise".into()));
    }
    let clusters = p
        .members()
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let mut mean = vec![0.0; emb.dim()];
            for &i in &members {
                for (m, x) in mean.iter_mut().zip(emb.vector(i)) {
                    *m += x;
                }
            }
            let centroid = l2_normalize(&mean)?;
            let dists: Vec<f64> = members
                .iter()
                .map(|&i| cosine_distance(emb.vector(i), &centroid).max(0.0))
                .collect();
            Ok(RegistryEntry {
                id,
                radius: quantile(&dists, RADIUS_QUANTILE),
                centroid,
                count: members.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterRegistry { clusters })
}

/// Which branch produced the recovered partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RecoveryMethod {
    Components { k: usize },
    ExactCount { k: usize, gamma: f64 },
    Penalized { k: usize, gamma: f64, score: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub partition: Partition,
    pub registry: ClusterRegistry,
    pub method: RecoveryMethod,
}

/// Score that punishes missing the target count: `-2|n_c - K| + s`.
pub fn recovery_score(n_clusters: usize, k_baseline: usize, silhouette: f64) -> f64 {
    -2.0 * n_clusters.abs_diff(k_baseline) as f64 + silhouette
}

/// Recover `k_baseline` clusters on the seen embeddings. Clusters beyond the
/// `k_baseline` largest become noise so recovered ids stay below the target.
pub fn target_aware_recovery(seen: &EmbeddingSet, k_baseline: usize, cfg: &SweepConfig) -> Result<Recovery> {
    if k_baseline < 1 {
        return Err(Error::InvalidArgument("K_baseline must be >= 1".into()));
    }
    cfg.validate()?;
    let comps = sweep::component_partitions(seen, cfg.min_cluster_size, cfg.sigma)?;
    let (partition, method) = if let Some((k, p)) = comps.into_iter().find(|(_, p)| p.n_clusters() == k_baseline) {
        (p, RecoveryMethod::Components { k })
    } else {
        let grid = sweep::evaluate_grid(seen, cfg, None)?;
        // Grid order is k-major then γ ascending, so strict improvement keeps
        // the smaller k and γ on ties.
        let mut exact: Option<usize> = None;
        let mut scored: Option<(usize, f64)> = None;
        for (i, r) in grid.iter().enumerate() {
            if r.n_clusters == 0 {
                continue;
            }
            if r.n_clusters == k_baseline && exact.is_none_or(|b| r.silhouette > grid[b].silhouette) {
                exact = Some(i);
            }
            let s = recovery_score(r.n_clusters, k_baseline, r.silhouette);
            if scored.is_none_or(|(_, b)| s > b) {
                scored = Some((i, s));
            }
        }
        match (exact, scored) {
            (Some(i), _) => (
                Partition::new(grid[i].labels.clone())?,
                RecoveryMethod::ExactCount {
                    k: grid[i].k,
                    gamma: grid[i].gamma,
                },
            ),
            (None, Some((i, score))) => (
                Partition::new(grid[i].labels.clone())?,
                RecoveryMethod::Penalized {
                    k: grid[i].k,
                    gamma: grid[i].gamma,
                    score,
                },
            ),
            (None, None) => {
                return Err(Error::NoValidPartition(
                    "every recovery grid cell filtered to all noise".into(),
                ))
            }
        }
    };
    let partition = if partition.n_clusters() > k_baseline {
        let raw: Vec<i64> = partition
            .labels()
            .iter()
            .map(|&l| if l >= k_baseline as i64 { NOISE } else { l })
            .collect();
        Partition::new(raw)?
    } else {
        partition
    };
    let registry = build_registry(seen, &partition)?;
    Ok(Recovery {
        partition,
        registry,
        method,
    })
}

/// How novel candidates were split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NoveltyMethod {
    None,
    TooFew,
    Components { k: usize },
    Sweep { k: usize, gamma: f64 },
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub ids: Vec<String>,
    /// Recovered ids below `k_baseline`, novel ids from `k_baseline`, noise -1.
    pub labels: Vec<i64>,
    /// Cosine distance to the nearest anchor.
    pub distances: Vec<f64>,
    pub nearest: Vec<usize>,
    pub k_baseline: usize,
    pub novel_ids: Vec<i64>,
    pub novelty: NoveltyMethod,
}

/// Assignment radius of an anchor: `θ · expansion · max(r, floor)`.
pub fn assignment_radius(radius: f64, theta: f64, expansion: f64) -> f64 {
    theta * expansion * radius.max(RADIUS_FLOOR)
}

/// Assign each online embedding to its nearest anchor when inside the scaled
/// radius; sub-cluster the rest into novel clusters numbered from the
/// registry size.
pub fn anchored_assign(
    online: &EmbeddingSet,
    reg: &ClusterRegistry,
    theta: f64,
    expansion: f64,
    cfg: &SweepConfig,
) -> Result<Assignment> {
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!("theta must be > 0, got {theta}")));
    }
    if !(expansion >= 1.0) {
        return Err(Error::InvalidArgument(format!("expansion must be >= 1, got {expansion}")));
    }
    if reg.is_empty() {
        return Err(Error::InvalidArgument("registry has no clusters".into()));
    }
    if reg.clusters[0].centroid.len() != online.dim() {
        return Err(Error::DimensionMismatch(format!(
            "online embeddings have dimension {}, registry {}",
            online.dim(),
            reg.clusters[0].centroid.len()
        )));
    }
    let k_baseline = reg.len();
    let nearest: Vec<(usize, f64)> = (0..online.len())
        .into_par_iter()
        .map(|i| reg.nearest(online.vector(i)))
        .collect();
    let mut labels = vec![NOISE; online.len()];
    let mut candidates = Vec::new();
    for (i, &(c, d)) in nearest.iter().enumerate() {
        if d <= assignment_radius(reg.clusters[c].radius, theta, expansion) {
            labels[i] = reg.clusters[c].id as i64;
        } else {
            candidates.push(i);
        }
    }
    let (sub, novelty) = cluster_candidates(online, &candidates, cfg)?;
    let mut novel_ids = Vec::new();
    if let Some(sub) = sub {
        for (&i, &l) in candidates.iter().zip(sub.labels()) {
            if l >= 0 {
                labels[i] = k_baseline as i64 + l;
            }
        }
        novel_ids = (0..sub.n_clusters() as i64).map(|l| k_baseline as i64 + l).collect();
    }
    Ok(Assignment {
        ids: online.ids().into_iter().map(String::from).collect(),
        labels,
        distances: nearest.iter().map(|&(_, d)| d).collect(),
        nearest: nearest.iter().map(|&(c, _)| reg.clusters[c].id).collect(),
        k_baseline,
        novel_ids,
        novelty,
    })
}

fn cluster_candidates(
    online: &EmbeddingSet,
    candidates: &[usize],
    cfg: &SweepConfig,
) -> Result<(Option<Partition>, NoveltyMethod)> {
    let m = cfg.min_cluster_size;
    if candidates.is_empty() {
        return Ok((None, NoveltyMethod::None));
    }
    if candidates.len() < m {
        return Ok((None, NoveltyMethod::TooFew));
    }
    let pool = online.select(candidates)?;
    if let Some(found) = sweep::auto_structure_detect(&pool, m, cfg.sigma)? {
        return Ok((Some(found.partition), NoveltyMethod::Components { k: found.k }));
    }
    if pool.len() >= 2 * m {
        match sweep::joint_sweep(&pool, &cfg.restricted(pool.len()), None) {
            Ok(res) => {
                let method = NoveltyMethod::Sweep {
                    k: res.k,
                    gamma: res.gamma,
                };
                return Ok((Some(res.partition), method));
            }
            Err(Error::NoValidPartition(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((Some(Partition::new(vec![0; pool.len()])?), NoveltyMethod::Single))
}

/// Output of the full two-stage procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationResult {
    pub k_baseline: usize,
    pub theta: f64,
    pub expansion: f64,
    pub recovery: RecoveryMethod,
    pub seen_ids: Vec<String>,
    pub seen_labels: Vec<i64>,
    pub online_ids: Vec<String>,
    pub online_labels: Vec<i64>,
    pub online_distances: Vec<f64>,
    pub recovered_ids: Vec<i64>,
    pub novel_ids: Vec<i64>,
    pub novelty: NoveltyMethod,
    pub n_clusters: usize,
    pub registry: ClusterRegistry,
}

impl AdaptationResult {
    /// Seen labels followed by online labels.
    pub fn combined_labels(&self) -> Vec<i64> {
        self.seen_labels.iter().chain(&self.online_labels).copied().collect()
    }
}

/// Recover the baseline on `seen`, then stream `online` through the
/// recovered anchors.
pub fn adapt(
    seen: &EmbeddingSet,
    online: &EmbeddingSet,
    k_baseline: usize,
    theta: f64,
    expansion: f64,
    cfg: &SweepConfig,
) -> Result<AdaptationResult> {
    if online.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rec = target_aware_recovery(seen, k_baseline, cfg)?;
    let asg = anchored_assign(online, &rec.registry, theta, expansion, cfg)?;
    let recovered_ids: Vec<i64> = rec.registry.clusters.iter().map(|c| c.id as i64).collect();
    Ok(AdaptationResult {
        k_baseline,
        theta,
        expansion,
        recovery: rec.method,
        seen_ids: seen.ids().into_iter().map(String::from).collect(),
        seen_labels: rec.partition.into_labels(),
        online_ids: asg.ids,
        online_labels: asg.labels,
        online_distances: asg.distances,
        n_clusters: recovered_ids.len() + asg.novel_ids.len(),
        recovered_ids,
        novel_ids: asg.novel_ids,
        novelty: asg.novelty,
        registry: rec.registry,
    })
}
