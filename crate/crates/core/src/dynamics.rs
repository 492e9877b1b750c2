//! Finite-difference behavioral features and the redundancy gate.
//!
//! For `Δs_t = s_{t+1} - s_t` and control sensitivity
//! `γ_t = ‖Δs_t‖ / (‖a_t‖ + ε)` over `t = 0..T-2`, each trajectory gets
//!
//! | idx | feature |
//! |-----|---------|
//! | 0   | mean γ |
//! | 1   | std γ (population) |
//! | 2   | max γ |
//! | 3   | variance of the first differences `γ_{t+1} - γ_t` |
//! | 4   | top singular value of the mean-centred cross-covariance `Cov(Δs, a)` |
//! | 5   | ratio of the top two singular values |
//! | 6   | mean ‖a_t‖ |
//! | 7   | std ‖a_t‖ |

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Trajectory};
use crate::embedder::EmbeddingSet;
use crate::error::{Error, Result};
use crate::{cosine_similarity, jsonl, rng};

pub const N_FEATURES: usize = 8;
pub const SENSITIVITY_EPS: f64 = 1e-8;
pub const RATIO_FLOOR: f64 = 1e-12;
pub const REDUNDANCY_THRESHOLD: f64 = 0.7;
/// Above this many trajectories the gate samples pairs instead of using all.
pub const EXHAUSTIVE_PAIR_LIMIT: usize = 500;
pub const SAMPLED_PAIRS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehavFeatures(pub [f64; N_FEATURES]);

impl BehavFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Features keyed by trajectory id.
pub type FeatureMap = BTreeMap<String, BehavFeatures>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureRecord {
    id: String,
    features: Vec<f64>,
}

pub fn save_features(path: &Path, ids: &[String], feats: &FeatureMap) -> Result<()> {
    let records = ids.iter().map(|id| FeatureRecord {
        id: id.clone(),
        features: feats[id].0.to_vec(),
    });
    jsonl::write_lines(path, records)
}

pub fn load_features(path: &Path) -> Result<FeatureMap> {
    let records: Vec<FeatureRecord> = jsonl::read_lines(path)?;
    let mut out = FeatureMap::new();
    for r in records {
        let arr: [f64; N_FEATURES] = r.features.as_slice().try_into().map_err(|_| {
            Error::DimensionMismatch(format!(
                "features of `{}` have {} entries, expected {N_FEATURES}",
                r.id,
                r.features.len()
            ))
        })?;
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of `{}`", r.id)));
        }
        if out.insert(r.id.clone(), BehavFeatures(arr)).is_some() {
            return Err(Error::DuplicateId(r.id));
        }
    }
    Ok(out)
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean-centred `d_s × d_a` cross-covariance of `Δs_t` and `a_t`, left as a
/// plain sum over steps (no `1/T` scaling).
pub fn cross_covariance(t: &Trajectory) -> DMatrix<f64> {
    let steps = t.len() - 1;
    let ds = t.state_dim();
    let da = t.action_dim();
    let deltas: Vec<Vec<f64>> = (0..steps)
        .map(|i| t.states[i + 1].iter().zip(&t.states[i]).map(|(n, c)| n - c).collect())
        .collect();
    let mean_d: Vec<f64> = (0..ds)
        .map(|r| deltas.iter().map(|d| d[r]).sum::<f64>() / steps as f64)
        .collect();
    let mean_a: Vec<f64> = (0..da)
        .map(|c| t.actions[..steps].iter().map(|a| a[c]).sum::<f64>() / steps as f64)
        .collect();
    DMatrix::from_fn(ds, da, |r, c| {
        (0..steps)
            .map(|i| (deltas[i][r] - mean_d[r]) * (t.actions[i][c] - mean_a[c]))
            .sum::<f64>()
    })
}

pub fn extract_features(t: &Trajectory) -> Result<BehavFeatures> {
    if t.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "trajectory `{}` needs T >= 2 for finite differences",
            t.id
        )));
    }
    let steps = t.len() - 1;
    let action_norms: Vec<f64> = t.actions[..steps].iter().map(|a| norm(a.iter().copied())).collect();
    let gamma: Vec<f64> = (0..steps)
        .map(|i| {
            let ds = norm(t.states[i + 1].iter().zip(&t.states[i]).map(|(n, c)| n - c));
            ds / (action_norms[i] + SENSITIVITY_EPS)
        })
        .collect();
    let (g_mean, g_std) = mean_std(&gamma);
    let g_max = gamma.iter().copied().fold(0.0, f64::max);
    let g_temporal = if gamma.len() < 2 {
        0.0
    } else {
        let diffs: Vec<f64> = gamma.windows(2).map(|w| w[1] - w[0]).collect();
        mean_std(&diffs).1.powi(2)
    };

    let mut sv: Vec<f64> = cross_covariance(t).singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let top = sv.first().copied().unwrap_or(0.0);
    let second = sv.get(1).copied().unwrap_or(0.0);
    let ratio = if top < RATIO_FLOOR && second < RATIO_FLOOR {
        1.0
    } else {
        top / second.max(RATIO_FLOOR)
    };

    let (a_mean, a_std) = mean_std(&action_norms);
    Ok(BehavFeatures([
        g_mean, g_std, g_max, g_temporal, top, ratio, a_mean, a_std,
    ]))
}

/// Features for every trajectory of a dataset (raw, un-normalized data).
pub fn extract_all(data: &Dataset) -> Result<FeatureMap> {
    data.trajectories()
        .iter()
        .map(|t| Ok((t.id.clone(), extract_features(t)?)))
        .collect()
}

/// `exp(-‖a - b‖² / (2 σ_b²))` on already standardized features.
pub fn feature_similarity(a: &[f64], b: &[f64], sigma_b: f64) -> Result<f64> {
    if !(sigma_b > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_b must be > 0, got {sigma_b}")));
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((-d2 / (2.0 * sigma_b * sigma_b)).exp())
}

/// Z-score each feature column; zero-variance columns are only centred.
pub fn standardize(rows: &[BehavFeatures]) -> Vec<[f64; N_FEATURES]> {
    let n = rows.len() as f64;
    let mut mean = [0.0; N_FEATURES];
    let mut std = [0.0; N_FEATURES];
    for d in 0..N_FEATURES {
        let col: Vec<f64> = rows.iter().map(|r| r.0[d]).collect();
        let (m, s) = mean_std(&col);
        mean[d] = m;
        std[d] = if s > 0.0 && n > 0.0 { s } else { 1.0 };
    }
    rows.iter()
        .map(|r| {
            let mut z = [0.0; N_FEATURES];
            for d in 0..N_FEATURES {
                z[d] = (r.0[d] - mean[d]) / std[d];
            }
            z
        })
        .collect()
}

/// Index pairs used for correlation and bandwidth estimates: every `i < j`
/// up to [`EXHAUSTIVE_PAIR_LIMIT`] points, otherwise [`SAMPLED_PAIRS`]
/// seeded draws with `i != j`.
pub fn sample_pairs(n: usize, seed: u64) -> Vec<(usize, usize)> {
    if n <= EXHAUSTIVE_PAIR_LIMIT {
        return (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    }
    let mut r = rng::seeded(seed);
    (0..SAMPLED_PAIRS)
        .map(|_| loop {
            let i = r.random_range(0..n);
            let j = r.random_range(0..n);
            if i != j {
                break (i.min(j), i.max(j));
            }
        })
        .collect()
}

/// Median pairwise Euclidean distance of standardized features; 1.0 when
/// the median is zero.
pub fn median_bandwidth(std_feats: &[[f64; N_FEATURES]], seed: u64) -> f64 {
    let mut d: Vec<f64> = sample_pairs(std_feats.len(), seed)
        .into_iter()
        .map(|(i, j)| norm(std_feats[i].iter().zip(&std_feats[j]).map(|(a, b)| a - b)))
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Features aligned to `ids`, failing with every missing id named.
pub fn align_features(ids: &[&str], feats: &FeatureMap) -> Result<Vec<BehavFeatures>> {
    let missing: Vec<&str> = ids.iter().copied().filter(|id| !feats.contains_key(*id)).collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().copied().take(10).collect();
        return Err(Error::IdMismatch(format!(
            "{} ids without features: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 10 { ", ..." } else { "" }
        )));
    }
    Ok(ids.iter().map(|id| feats[*id]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedundancyReport {
    pub pearson: f64,
    pub spearman: f64,
    pub average: f64,
    pub use_features: bool,
    pub n_pairs: usize,
}

/// Correlate embedding cosine similarity with behavioral similarity over
/// trajectory pairs; features are used only when the average of Pearson and
/// Spearman correlation is at most 0.7.
pub fn redundancy_check(emb: &EmbeddingSet, feats: &FeatureMap, seed: u64) -> Result<RedundancyReport> {
    let ids = emb.ids();
    if ids.len() < 3 {
        return Err(Error::InvalidArgument("redundancy check needs >= 3 trajectories".into()));
    }
    if feats.len() != ids.len() {
        let known: std::collections::HashSet<&str> = ids.iter().copied().collect();
        let extra: Vec<&str> = feats
            .keys()
            .map(String::as_str)
            .filter(|k| !known.contains(k))
            .take(10)
            .collect();
        if !extra.is_empty() {
            return Err(Error::IdMismatch(format!(
                "features for unknown ids: {}",
                extra.join(", ")
            )));
        }
    }
    let aligned = align_features(&ids, feats)?;
    let z = standardize(&aligned);
    let sigma_b = median_bandwidth(&z, seed);
    let pairs = sample_pairs(ids.len(), seed);
    let mut e_sim = Vec::with_capacity(pairs.len());
    let mut b_sim = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        e_sim.push(cosine_similarity(emb.vector(i), emb.vector(j)));
        b_sim.push(feature_similarity(&z[i], &z[j], sigma_b)?);
    }
    let pearson = pearson(&e_sim, &b_sim);
    let spearman = spearman(&e_sim, &b_sim);
    let average = (pearson + spearman) / 2.0;
    Ok(RedundancyReport {
        pearson,
        spearman,
        average,
        use_features: average <= REDUNDANCY_THRESHOLD,
        n_pairs: pairs.len(),
    })
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Spearman correlation: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

pub(crate) fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}
