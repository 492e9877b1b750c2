//! Trajectory datasets: JSON Lines I/O, validation, a seeded synthetic
//! generator and dataset-wide quantile normalization.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::rng;

/// One demonstration: `T` paired state and action rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    #[serde(default)]
    pub label: Option<i64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    /// Check the per-trajectory invariants: `T >= 2`, matching row counts,
    /// rectangular non-empty rows and finite entries.
    pub fn validate(&self) -> Result<()> {
        let t = self.states.len();
        if t != self.actions.len() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory `{}` has {} states but {} actions",
                self.id,
                t,
                self.actions.len()
            )));
        }
        if t < 2 {
            return Err(Error::InvalidArgument(format!(
                "trajectory `{}` has {} timesteps, need at least 2",
                self.id, t
            )));
        }
        for (name, rows) in [("states", &self.states), ("actions", &self.actions)] {
            let width = rows[0].len();
            if width == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "trajectory `{}` has zero-width {}",
                    self.id, name
                )));
            }
            for row in rows.iter() {
                if row.len() != width {
                    return Err(Error::DimensionMismatch(format!(
                        "trajectory `{}` has ragged {}",
                        self.id, name
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("{} of `{}`", name, self.id)));
                }
            }
        }
        Ok(())
    }
}

/// A validated, non-empty collection of trajectories with uniform dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    state_dim: usize,
    action_dim: usize,
    has_labels: bool,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories.first().ok_or(Error::EmptyDataset)?;
        let state_dim = first.state_dim();
        let action_dim = first.action_dim();
        let mut seen = HashSet::with_capacity(trajectories.len());
        for t in &trajectories {
            t.validate()?;
            if t.state_dim() != state_dim || t.action_dim() != action_dim {
                return Err(Error::DimensionMismatch(format!(
                    "trajectory `{}` has d_s={}, d_a={} but dataset has d_s={}, d_a={}",
                    t.id,
                    t.state_dim(),
                    t.action_dim(),
                    state_dim,
                    action_dim
                )));
            }
            if !seen.insert(t.id.as_str()) {
                return Err(Error::DuplicateId(t.id.clone()));
            }
        }
        let labelled = trajectories.iter().filter(|t| t.label.is_some()).count();
        Ok(Self {
            has_labels: labelled == trajectories.len(),
            trajectories,
            state_dim,
            action_dim,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(jsonl::read_lines(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_lines(path, &self.trajectories)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<Trajectory> {
        self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// True when every trajectory carries a ground-truth label.
    pub fn has_labels(&self) -> bool {
        self.has_labels
    }

    pub fn ids(&self) -> Vec<String> {
        self.trajectories.iter().map(|t| t.id.clone()).collect()
    }

    /// Ground-truth labels, `None` unless every trajectory is labelled.
    pub fn labels(&self) -> Option<Vec<i64>> {
        self.trajectories.iter().map(|t| t.label).collect()
    }

    /// Keep the trajectories matching `keep`, preserving order.
    pub fn filter(&self, keep: impl Fn(&Trajectory) -> bool) -> Result<Self> {
        Self::new(self.trajectories.iter().filter(|t| keep(t)).cloned().collect())
    }
}

/// Parameters for [`synth_generate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_modes: usize,
    pub per_mode: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_modes: 6,
            per_mode: 100,
            horizon: 50,
            state_dim: 2,
            action_dim: 1,
            separation: 5.0,
            seed: 0,
        }
    }
}

const SYNTH_DECAY: f64 = 0.8;
const SYNTH_ROTATION: f64 = 2.5;
const SYNTH_PROCESS_NOISE: f64 = 0.2;
const SYNTH_ACTION_NOISE: f64 = 0.3;
const SYNTH_INIT_STD: f64 = 0.5;
const SYNTH_COUPLING: f64 = 0.2;
/// Offset (in steps) that keeps centers from sharing a coordinate.
const SYNTH_PHASE: f64 = 0.25;
const SYNTH_OFFSET: f64 = 0.2;

/// Generate a labelled multi-mode dataset of linear-Gaussian systems.
///
/// Each mode `j` tracks its own set point `c_j` with deviation dynamics
///
/// ```text
/// x_t     = s_t - c_j
/// a_t     = g_j * F x_t + nu_t
/// x_{t+1} = A x_t + B a_t + w_t
/// ```
///
/// `A` is a damped rotation shared by all modes, `B` and `F` are seeded
/// coupling matrices. The set points sit on a circle (a line when
/// `d_s = 1`) with adjacent spacing equal to `separation`, and the feedback
/// gain is `g_j = exp(0.05 * separation * xi_j)` with `xi_j` evenly spread
/// over `[-1, 1]`. At `separation = 0` every mode has the same law.
///
/// Noise is drawn in antithetic pairs: within a mode, every odd trajectory
/// reuses the previous one's draws with the sign flipped, so per-mode sample
/// means carry no sampling noise from the deviation process.
///
/// Trajectory ids are `traj_00000, traj_00001, ...` in mode-major order.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n_modes == 0 || cfg.per_mode == 0 || cfg.state_dim == 0 || cfg.action_dim == 0 {
        return Err(Error::InvalidArgument("synthetic counts must be >= 1".into()));
    }
    if cfg.horizon < 2 {
        return Err(Error::InvalidArgument("horizon must be >= 2".into()));
    }
    if !(cfg.separation >= 0.0 && cfg.separation.is_finite()) {
        return Err(Error::InvalidArgument("separation must be finite and >= 0".into()));
    }
    let ds = cfg.state_dim;
    let da = cfg.action_dim;

    let mut prng = rng::derived(cfg.seed, 0);
    let coupling_b = gaussian_matrix(&mut prng, ds, da, SYNTH_COUPLING / (da as f64).sqrt());
    let feedback = gaussian_matrix(&mut prng, da, ds, SYNTH_COUPLING / (ds as f64).sqrt());

    let centers: Vec<Vec<f64>> = (0..cfg.n_modes)
        .map(|j| mode_center(j, cfg.n_modes, ds, cfg.separation))
        .collect();
    let laws: Vec<(f64, f64)> = (0..cfg.n_modes)
        .map(|j| {
            let xi = if cfg.n_modes == 1 {
                0.0
            } else {
                2.0 * j as f64 / (cfg.n_modes - 1) as f64 - 1.0
            };
            ((0.05 * cfg.separation * xi).exp(), SYNTH_OFFSET * cfg.separation * xi)
        })
        .collect();

    let mut trng = rng::derived(cfg.seed, 1);
    let mut trajectories = Vec::with_capacity(cfg.n_modes * cfg.per_mode);
    let mut noise = Vec::new();
    for (mode, (center, &(gain, offset))) in centers.iter().zip(&laws).enumerate() {
        for k in 0..cfg.per_mode {
            // odd trajectories replay the previous draw with flipped sign
            let sign = if k % 2 == 0 {
                noise = (0..ds + cfg.horizon * (da + ds)).map(|_| normal(&mut trng)).collect();
                1.0
            } else {
                -1.0
            };
            let mut draws = noise.iter().map(|z| sign * z);
            let mut x: Vec<f64> = draws.by_ref().take(ds).map(|z| SYNTH_INIT_STD * z).collect();
            let mut states = Vec::with_capacity(cfg.horizon);
            let mut actions = Vec::with_capacity(cfg.horizon);
            for _ in 0..cfg.horizon {
                let a: Vec<f64> = (0..da)
                    .map(|r| {
                        let nu = draws.next().unwrap_or_default();
                        gain * dot_row(&feedback[r], &x) + alternate(r) * offset + SYNTH_ACTION_NOISE * nu
                    })
                    .collect();
                states.push(x.iter().zip(center).map(|(xi, ci)| xi + ci).collect());
                let mut next = rotate(&x);
                for (i, n) in next.iter_mut().enumerate() {
                    let w = draws.next().unwrap_or_default();
                    *n += dot_row(&coupling_b[i], &a) + SYNTH_PROCESS_NOISE * w;
                }
                actions.push(a);
                x = next;
            }
            let id = format!("traj_{:05}", trajectories.len());
            trajectories.push(Trajectory {
                id,
                states,
                actions,
                label: Some(mode as i64),
            });
        }
    }
    Dataset::new(trajectories)
}

fn normal(rng: &mut rng::SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

fn alternate(r: usize) -> f64 {
    if r.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn gaussian_matrix(rng: &mut rng::SeededRng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| scale * normal(rng)).collect())
        .collect()
}

fn dot_row(row: &[f64], x: &[f64]) -> f64 {
    row.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Damped rotation acting on consecutive coordinate pairs; a trailing odd
/// coordinate is damped with a sign flip.
fn rotate(x: &[f64]) -> Vec<f64> {
    let (s, c) = SYNTH_ROTATION.sin_cos();
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i + 1 < x.len() {
        out[i] = SYNTH_DECAY * (c * x[i] - s * x[i + 1]);
        out[i + 1] = SYNTH_DECAY * (s * x[i] + c * x[i + 1]);
        i += 2;
    }
    if i < x.len() {
        out[i] = -SYNTH_DECAY * x[i];
    }
    out
}

fn mode_center(mode: usize, n_modes: usize, dim: usize, separation: f64) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    if n_modes == 1 {
        return c;
    }
    if dim == 1 {
        c[0] = separation * (mode as f64 - (n_modes - 1) as f64 / 2.0);
    } else {
        // chord between adjacent points equals `separation`
        let step = std::f64::consts::TAU / n_modes as f64;
        let radius = separation / (2.0 * (step / 2.0).sin());
        let angle = step * (mode as f64 + SYNTH_PHASE);
        c[0] = radius * angle.cos();
        c[1] = radius * angle.sin();
    }
    c
}

/// Per-dimension reference distributions for rank-based normal scores.
///
/// States occupy dimensions `0..d_s` and actions `d_s..d_s + d_a`; every
/// dimension is fitted on all timesteps of all trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileNormalizer {
    state_dim: usize,
    action_dim: usize,
    reference: Vec<Vec<f64>>,
}

impl QuantileNormalizer {
    pub fn fit(data: &Dataset) -> Self {
        let ds = data.state_dim();
        let da = data.action_dim();
        let mut reference = vec![Vec::new(); ds + da];
        for t in data.trajectories() {
            for (s, a) in t.states.iter().zip(&t.actions) {
                for (d, v) in s.iter().chain(a.iter()).enumerate() {
                    reference[d].push(*v);
                }
            }
        }
        for col in &mut reference {
            col.sort_by(f64::total_cmp);
        }
        Self {
            state_dim: ds,
            action_dim: da,
            reference,
        }
    }

    pub fn dims(&self) -> usize {
        self.reference.len()
    }

    pub fn reference(&self, dim: usize) -> &[f64] {
        &self.reference[dim]
    }

    /// Normal score of `x` in dimension `dim`.
    ///
    /// Fitted values map to `Phi^-1((r - 0.5) / N)` with `r` the average rank
    /// among ties. Values between fitted values interpolate the rank linearly,
    /// and values outside the fitted range clamp to the extreme ranks.
    pub fn transform_value(&self, dim: usize, x: f64) -> f64 {
        let refs = &self.reference[dim];
        let n = refs.len();
        let rank = fractional_rank(refs, x);
        let p = (rank - 0.5) / n as f64;
        inverse_normal_cdf(p)
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        if data.state_dim() != self.state_dim || data.action_dim() != self.action_dim {
            return Err(Error::DimensionMismatch(format!(
                "normalizer fitted for d_s={}, d_a={}, data has d_s={}, d_a={}",
                self.state_dim,
                self.action_dim,
                data.state_dim(),
                data.action_dim()
            )));
        }
        let ds = self.state_dim;
        let trajectories = data
            .trajectories()
            .iter()
            .map(|t| Trajectory {
                id: t.id.clone(),
                states: t
                    .states
                    .iter()
                    .map(|row| row.iter().enumerate().map(|(d, v)| self.transform_value(d, *v)).collect())
                    .collect(),
                actions: t
                    .actions
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .map(|(d, v)| self.transform_value(ds + d, *v))
                            .collect()
                    })
                    .collect(),
                label: t.label,
            })
            .collect();
        Dataset::new(trajectories)
    }
}

/// 1-based average rank of `x` in sorted `refs`, interpolated between
/// neighbouring distinct values and clamped at the ends.
fn fractional_rank(refs: &[f64], x: f64) -> f64 {
    let n = refs.len();
    let below = refs.partition_point(|v| *v < x);
    let upto = refs.partition_point(|v| *v <= x);
    if upto > below {
        return (below + 1 + upto) as f64 / 2.0;
    }
    if below == 0 {
        return avg_rank_of(refs, refs[0]);
    }
    if below == n {
        return avg_rank_of(refs, refs[n - 1]);
    }
    let (lo, hi) = (refs[below - 1], refs[below]);
    let (r_lo, r_hi) = (avg_rank_of(refs, lo), avg_rank_of(refs, hi));
    r_lo + (r_hi - r_lo) * (x - lo) / (hi - lo)
}

fn avg_rank_of(refs: &[f64], v: f64) -> f64 {
    let below = refs.partition_point(|r| *r < v);
    let upto = refs.partition_point(|r| *r <= v);
    (below + 1 + upto) as f64 / 2.0
}

pub(crate) fn inverse_normal_cdf(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
