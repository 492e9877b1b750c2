//! Baseline mode discovery: isolated-component detection, the joint
//! (k, resolution) sweep with neighbour-ARI stability selection, and
//! small-cluster filtering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::{self, Partition};
use crate::dynamics::{self, FeatureMap, RedundancyReport};
use crate::embedder::EmbeddingSet;
use crate::error::{Error, Result};
use crate::graph::{self, KnnIndex, DEFAULT_BEHAVIOR_ALPHA, DEFAULT_SIGMA};
use crate::metrics::{self, DistanceMatrix};

/// Resolution values swept by default.
pub const DEFAULT_GAMMAS: [f64; 13] = [
    0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0,
];
/// Neighbour counts probed for isolated components.
pub const COMPONENT_KS: [usize; 4] = [15, 30, 50, 75];
pub const DEFAULT_N_K: usize = 8;
/// Grid cells are stability neighbours when `|k' - k| <= 15` or
/// `|γ' - γ| <= 0.3`.
pub const NEIGHBOR_K_RADIUS: usize = 15;
pub const NEIGHBOR_GAMMA_RADIUS: f64 = 0.3;
const GAMMA_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub n_k: usize,
    pub gammas: Vec<f64>,
    pub min_cluster_size: usize,
    pub sigma: f64,
    /// Edge reweighting strength when behavioral features are supplied.
    pub behavior_alpha: f64,
    pub seed: u64,
}

/// `max(5, ⌈0.02 N⌉)`: clusters smaller than `max(5, 0.02 N)` are noise.
pub fn default_min_cluster_size(n: usize) -> usize {
    5.max((n * 2).div_ceil(100))
}

impl SweepConfig {
    /// Defaults for `n` points: `k ∈ [max(5, N/50), min(100, N/3)]`, clamped
    /// to `N - 1`.
    pub fn for_n(n: usize) -> Self {
        let cap = n.saturating_sub(1).max(1);
        let k_min = 5.max(n / 50).min(cap);
        let k_max = 100.min(n / 3).clamp(k_min, cap);
        Self {
            k_min,
            k_max,
            n_k: DEFAULT_N_K,
            gammas: DEFAULT_GAMMAS.to_vec(),
            min_cluster_size: default_min_cluster_size(n),
            sigma: DEFAULT_SIGMA,
            behavior_alpha: DEFAULT_BEHAVIOR_ALPHA,
            seed: 0,
        }
    }

    /// Grid for sub-clustering `n` novel candidates: `k ∈ [5, n/2]`.
    pub fn restricted(&self, n: usize) -> Self {
        let cap = n.saturating_sub(1).max(1);
        let k_min = 5.min(cap);
        let k_max = (n / 2).clamp(k_min, cap);
        Self {
            k_min,
            k_max,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.k_min < 1 || self.k_max < self.k_min {
            return bad("need 1 <= k_min <= k_max");
        }
        if self.n_k < 2 {
            return bad("n_k must be >= 2");
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !(*g > 0.0)) {
            return bad("resolutions must be non-empty and positive");
        }
        if self.min_cluster_size < 1 {
            return bad("min cluster size must be >= 1");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be > 0");
        }
        if !(0.0..=1.0).contains(&self.behavior_alpha) {
            return bad("behavior alpha must lie in [0, 1]");
        }
        Ok(())
    }

    /// `n_k` linearly spaced neighbour counts, rounded and de-duplicated.
    pub fn k_values(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = (0..self.n_k)
            .map(|i| {
                let t = i as f64 / (self.n_k - 1) as f64;
                (self.k_min as f64 + t * (self.k_max - self.k_min) as f64).round() as usize
            })
            .collect();
        ks.dedup();
        ks
    }
}

/// Relabel members of clusters smaller than `m` as noise and compact the
/// survivors by decreasing size.
pub fn filter_small_clusters(p: &Partition, m: usize) -> Partition {
    let sizes = p.sizes();
    let raw: Vec<i64> = p
        .labels()
        .iter()
        .map(|&l| if l >= 0 && sizes[l as usize] >= m { l } else { -1 })
        .collect();
    Partition::canonical(&raw)
}

/// Components found by [`auto_structure_detect`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDetection {
    pub k: usize,
    pub partition: Partition,
}

/// Neighbour counts to probe, clamped to `N - 1` and de-duplicated.
pub fn component_ks(n: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = COMPONENT_KS
        .iter()
        .map(|&k| k.min(n.saturating_sub(1)))
        .filter(|&k| k >= 1)
        .collect();
    ks.dedup();
    ks
}

/// Significant components (size `>= m`, the rest noise) of the k-NN graph
/// for each probe `k`.
pub fn component_partitions(emb: &EmbeddingSet, m: usize, sigma: f64) -> Result<Vec<(usize, Partition)>> {
    let ks = component_ks(emb.len());
    let Some(&depth) = ks.iter().max() else {
        return Ok(Vec::new());
    };
    let index = KnnIndex::build(emb, depth)?;
    ks.into_iter()
        .map(|k| {
            let g = index.graph(k, sigma)?;
            Ok((k, filter_small_clusters(&graph::connected_components(&g), m)))
        })
        .collect()
}

/// First probe `k` whose graph splits into at least two significant
/// components, or `None` when every probe leaves a single one.
pub fn auto_structure_detect(emb: &EmbeddingSet, m: usize, sigma: f64) -> Result<Option<ComponentDetection>> {
    Ok(component_partitions(emb, m, sigma)?
        .into_iter()
        .find(|(_, p)| p.n_clusters() >= 2)
        .map(|(k, partition)| ComponentDetection { k, partition }))
}

/// One (k, γ) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub k: usize,
    pub gamma: f64,
    pub n_clusters: usize,
    pub n_noise: usize,
    /// Mean ARI against neighbouring cells.
    pub stability: f64,
    /// Cosine silhouette of the filtered partition; 0 with fewer than two
    /// clusters.
    pub silhouette: f64,
    /// `Q_γ` of the unfiltered Leiden partition.
    pub modularity: f64,
    pub labels: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub k: usize,
    pub gamma: f64,
    pub partition: Partition,
    pub n_clusters: usize,
    pub stability: f64,
    pub silhouette: f64,
    pub selected: usize,
    pub grid: Vec<GridRecord>,
}

/// Run Leiden on every (k, γ) cell and filter small clusters. Stability is
/// left at 0.
pub fn evaluate_grid(emb: &EmbeddingSet, cfg: &SweepConfig, feats: Option<&FeatureMap>) -> Result<Vec<GridRecord>> {
    cfg.validate()?;
    let n = emb.len();
    let ks: Vec<usize> = cfg.k_values().into_iter().map(|k| k.min(n - 1)).collect();
    let depth = ks.iter().copied().max().unwrap_or(1);
    let index = KnnIndex::build(emb, depth)?;
    let graphs = ks
        .iter()
        .map(|&k| {
            let g = index.graph(k, cfg.sigma)?;
            match feats {
                Some(f) => graph::reweight_edges(&g, f, cfg.behavior_alpha, None),
                None => Ok(g),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let dist = DistanceMatrix::cosine(emb);
    let cells: Vec<(usize, f64)> = (0..graphs.len())
        .flat_map(|gi| cfg.gammas.iter().map(move |&g| (gi, g)))
        .collect();
    cells
        .par_iter()
        .map(|&(gi, gamma)| {
            let run = community::leiden_run(&graphs[gi], &community::LeidenConfig::new(gamma, cfg.seed))?;
            let filtered = filter_small_clusters(&run.partition, cfg.min_cluster_size);
            let silhouette = if filtered.n_clusters() >= 2 {
                metrics::silhouette_with(&dist, filtered.labels())?
            } else {
                0.0
            };
            Ok(GridRecord {
                k: ks[gi],
                gamma,
                n_clusters: filtered.n_clusters(),
                n_noise: filtered.n_noise(),
                stability: 0.0,
                silhouette,
                modularity: run.modularity,
                labels: filtered.into_labels(),
            })
        })
        .collect()
}

pub fn are_neighbors(a: &GridRecord, b: &GridRecord) -> bool {
    a.k.abs_diff(b.k) <= NEIGHBOR_K_RADIUS || (a.gamma - b.gamma).abs() <= NEIGHBOR_GAMMA_RADIUS + GAMMA_SLACK
}

/// Fill `stability` with the mean ARI against every other neighbouring
/// cell (noise shared as one label). Cells without neighbours score 0.
pub fn assign_stability(grid: &mut [GridRecord]) -> Result<()> {
    let scores = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (j, other) in grid.iter().enumerate() {
                if i != j && are_neighbors(&grid[i], other) {
                    sum += metrics::ari(&grid[i].labels, &other.labels)?;
                    count += 1;
                }
            }
            Ok(if count == 0 { 0.0 } else { sum / count as f64 })
        })
        .collect::<Result<Vec<f64>>>()?;
    for (rec, s) in grid.iter_mut().zip(scores) {
        rec.stability = s;
    }
    Ok(())
}

/// Index of the selected cell among cells with at least one cluster:
/// highest stability, then highest silhouette, smaller k, smaller γ.
pub fn select_record(grid: &[GridRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in grid.iter().enumerate() {
        if r.n_clusters == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let c = &grid[b];
                r.stability
                    .total_cmp(&c.stability)
                    .then(r.silhouette.total_cmp(&c.silhouette))
                    .then(c.k.cmp(&r.k))
                    .then(c.gamma.total_cmp(&r.gamma))
                    .is_gt()
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Joint (k, γ) sweep with stability-based selection.
pub fn joint_sweep(emb: &EmbeddingSet, cfg: &SweepConfig, feats: Option<&FeatureMap>) -> Result<SweepResult> {
    if emb.len() < 2 * cfg.min_cluster_size || emb.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "sweep needs N >= 2 * min_cluster_size ({}), got N = {}",
            2 * cfg.min_cluster_size,
            emb.len()
        )));
    }
    let mut grid = evaluate_grid(emb, cfg, feats)?;
    assign_stability(&mut grid)?;
    let selected = select_record(&grid).ok_or_else(|| {
        Error::NoValidPartition("every sweep cell filtered to all noise".into())
    })?;
    let rec = &grid[selected];
    Ok(SweepResult {
        k: rec.k,
        gamma: rec.gamma,
        partition: Partition::new(rec.labels.clone())?,
        n_clusters: rec.n_clusters,
        stability: rec.stability,
        silhouette: rec.silhouette,
        selected,
        grid,
    })
}

/// How the baseline partition was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum DiscoveryMethod {
    Components { k: usize },
    Sweep { k: usize, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub partition: Partition,
    pub method: DiscoveryMethod,
    pub redundancy: Option<RedundancyReport>,
    pub sweep: Option<SweepResult>,
}

/// Full baseline clustering: redundancy gate on the features (if any),
/// isolated-component detection, then the joint sweep with reweighting
/// when the gate lets the features through.
pub fn discover_modes(emb: &EmbeddingSet, cfg: &SweepConfig, feats: Option<&FeatureMap>) -> Result<Discovery> {
    cfg.validate()?;
    let redundancy = match feats {
        Some(f) => Some(dynamics::redundancy_check(emb, f, cfg.seed)?),
        None => None,
    };
    if let Some(found) = auto_structure_detect(emb, cfg.min_cluster_size, cfg.sigma)? {
        return Ok(Discovery {
            partition: found.partition,
            method: DiscoveryMethod::Components { k: found.k },
            redundancy,
            sweep: None,
        });
    }
    let gated = match (feats, &redundancy) {
        (Some(f), Some(r)) if r.use_features => Some(f),
        _ => None,
    };
    let sweep = joint_sweep(emb, cfg, gated)?;
    Ok(Discovery {
        partition: sweep.partition.clone(),
        method: DiscoveryMethod::Sweep {
            k: sweep.k,
            gamma: sweep.gamma,
        },
        redundancy,
        sweep: Some(sweep),
    })
}
