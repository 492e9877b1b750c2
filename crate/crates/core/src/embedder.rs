//! Learning-free trajectory embedding.
//!
//! Each timestep's state and action pass through their own random Fourier
//! feature map `x -> [sin(2*pi*x*W), cos(2*pi*x*W)]`. The concatenated
//! per-step features `[state | action]` are mean-pooled over time, then
//! projected onto the unit sphere. The embedding width is `2 * (m_state + m_action)`.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, QuantileNormalizer, Trajectory};
use crate::error::{Error, Result};
use crate::{jsonl, rng};

pub const DEFAULT_STATE_FEATURES: usize = 64;
pub const DEFAULT_ACTION_FEATURES: usize = 32;
pub const DEFAULT_STATE_SCALE: f64 = 0.01;
pub const DEFAULT_ACTION_SCALE: f64 = 0.1;

/// Tolerance on the unit-norm invariant.
pub const UNIT_NORM_TOL: f64 = 1e-9;
const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RffConfig {
    pub state_features: usize,
    pub action_features: usize,
    pub state_scale: f64,
    pub action_scale: f64,
    pub seed: u64,
}

impl Default for RffConfig {
    fn default() -> Self {
        Self {
            state_features: DEFAULT_STATE_FEATURES,
            action_features: DEFAULT_ACTION_FEATURES,
            state_scale: DEFAULT_STATE_SCALE,
            action_scale: DEFAULT_ACTION_SCALE,
            seed: 0,
        }
    }
}

/// Gaussian projection matrices, rows indexed by input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RffParams {
    pub w_state: Vec<Vec<f64>>,
    pub w_action: Vec<Vec<f64>>,
    pub seed: u64,
}

impl RffParams {
    /// Draw `W_state ~ N(0, sigma_state^2)` and `W_action ~ N(0, sigma_action^2)`
    /// from two independent streams of the seed.
    pub fn sample(state_dim: usize, action_dim: usize, cfg: &RffConfig) -> Result<Self> {
        if cfg.state_features == 0 || cfg.action_features == 0 {
            return Err(Error::InvalidArgument("feature counts must be >= 1".into()));
        }
        if !(cfg.state_scale > 0.0 && cfg.action_scale > 0.0) {
            return Err(Error::InvalidArgument("feature scales must be > 0".into()));
        }
        let draw = |stream: u64, rows: usize, cols: usize, scale: f64| {
            let mut r = rng::derived(cfg.seed, stream);
            (0..rows)
                .map(|_| {
                    (0..cols)
                        .map(|_| scale * r.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        };
        Ok(Self {
            w_state: draw(0, state_dim, cfg.state_features, cfg.state_scale),
            w_action: draw(1, action_dim, cfg.action_features, cfg.action_scale),
            seed: cfg.seed,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        2 * (cols(&self.w_state) + cols(&self.w_action))
    }
}

fn cols(w: &[Vec<f64>]) -> usize {
    w.first().map_or(0, Vec::len)
}

/// `[sin(2*pi*xW), cos(2*pi*xW)]` for a row vector `x`.
pub fn rff_encode(x: &[f64], w: &[Vec<f64>]) -> Result<Vec<f64>> {
    if x.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} dims, projection has {} rows",
            x.len(),
            w.len()
        )));
    }
    let m = cols(w);
    let mut proj = vec![0.0; m];
    for (xi, row) in x.iter().zip(w) {
        for (p, wij) in proj.iter_mut().zip(row) {
            *p += xi * wij;
        }
    }
    let mut out = Vec::with_capacity(2 * m);
    out.extend(proj.iter().map(|p| (TAU * p).sin()));
    out.extend(proj.iter().map(|p| (TAU * p).cos()));
    Ok(out)
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector to normalize".into()));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < MIN_NORM {
        return Err(Error::DegenerateNorm(norm));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// A unit-norm trajectory summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub id: String,
    #[serde(rename = "embedding")]
    pub vector: Vec<f64>,
}

impl Embedding {
    /// Wrap an already unit-norm vector, rejecting anything off the sphere.
    pub fn new(id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if vector.is_empty() || vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding `{id}`")));
        }
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "embedding `{id}` has norm {norm}, expected 1"
            )));
        }
        Ok(Self { id, vector })
    }

    /// Project an arbitrary non-zero vector onto the sphere.
    pub fn normalized(id: impl Into<String>, vector: &[f64]) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            vector: l2_normalize(vector)?,
        })
    }
}

/// Embeddings with unique ids and a shared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    embeddings: Vec<Embedding>,
    dim: usize,
}

impl EmbeddingSet {
    pub fn new(embeddings: Vec<Embedding>) -> Result<Self> {
        let dim = embeddings.first().map_or(0, |e| e.vector.len());
        let mut ids = HashSet::with_capacity(embeddings.len());
        for e in &embeddings {
            if e.vector.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "embedding `{}` has dim {}, expected {}",
                    e.id,
                    e.vector.len(),
                    dim
                )));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { embeddings, dim })
    }

    /// Build from raw vectors with ids `"0", "1", ...`, normalizing each.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let embeddings = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| Embedding::normalized(i.to_string(), v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(embeddings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: Vec<Embedding> = jsonl::read_lines(path)?;
        let checked = raw
            .into_iter()
            .map(|e| Embedding::new(e.id, e.vector))
            .collect::<Result<Vec<_>>>()?;
        Self::new(checked)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_lines(path, &self.embeddings)
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.embeddings[i].vector
    }

    pub fn vectors(&self) -> Vec<&[f64]> {
        self.embeddings.iter().map(|e| e.vector.as_slice()).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.embeddings.iter().map(|e| e.id.as_str()).collect()
    }

    /// Subset by positional indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.embeddings[i].clone()).collect())
    }

    /// Concatenate two sets; ids must stay unique.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let mut all = self.embeddings.clone();
        all.extend(other.embeddings.iter().cloned());
        Self::new(all)
    }
}

/// Mean-pooled, L2-normalized RFF summary of one (normalized) trajectory.
pub fn embed_trajectory(t: &Trajectory, p: &RffParams) -> Result<Embedding> {
    let width = p.embedding_dim();
    let mut pooled = vec![0.0; width];
    for (s, a) in t.states.iter().zip(&t.actions) {
        let fs = rff_encode(s, &p.w_state)?;
        let fa = rff_encode(a, &p.w_action)?;
        for (acc, v) in pooled.iter_mut().zip(fs.iter().chain(fa.iter())) {
            *acc += v;
        }
    }
    let steps = t.states.len() as f64;
    for v in &mut pooled {
        *v /= steps;
    }
    let vector = l2_normalize(&pooled).map_err(|e| match e {
        Error::DegenerateNorm(n) => Error::InvalidArgument(format!(
            "pooled features of `{}` vanish (norm {n:e})",
            t.id
        )),
        other => other,
    })?;
    Ok(Embedding {
        id: t.id.clone(),
        vector,
    })
}

/// Embed every trajectory; output order follows the dataset.
pub fn embed_dataset(data: &Dataset, p: &RffParams) -> Result<EmbeddingSet> {
    let embeddings = data
        .trajectories()
        .par_iter()
        .map(|t| embed_trajectory(t, p))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(embeddings)
}

/// Fit the quantile normalizer on `data`, sample features from `cfg` and
/// embed every trajectory.
pub fn normalize_and_embed(data: &Dataset, cfg: &RffConfig) -> Result<EmbeddingSet> {
    let normed = QuantileNormalizer::fit(data).transform(data)?;
    let params = RffParams::sample(data.state_dim(), data.action_dim(), cfg)?;
    embed_dataset(&normed, &params)
}
