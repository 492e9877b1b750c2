//! Evaluators for every term of the contrastive objective, plus the
//! embedding-drift stability penalty.
//!
//! All evaluators work on cosine similarities and use log-sum-exp, so they
//! stay finite at small temperatures.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::embedder::{EmbeddingSet, UNIT_NORM_TOL};
use crate::error::{Error, Result};
use crate::{cosine_similarity, rng};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Which terms enter the InfoNCE denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoNceVariant {
    /// Positive included in the denominator; negatives are both views of
    /// every other trajectory. Always positive.
    #[default]
    NtXent,
    /// Positive excluded from the denominator, negatives are the paired
    /// view of every other trajectory. Can go negative.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub rho: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            gamma: 0.5,
            delta: 1.0,
            rho: DEFAULT_TEMPERATURE,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::InvalidArgument("temperature must be > 0".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Component values of the composite loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cls: f64,
    pub dim: f64,
    pub seg: f64,
    pub pair: f64,
}

/// Two views of the same `N` trajectories, paired by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewBatch {
    pub view1: Vec<Vec<f64>>,
    pub view2: Vec<Vec<f64>>,
}

impl ViewBatch {
    pub fn new(view1: Vec<Vec<f64>>, view2: Vec<Vec<f64>>) -> Result<Self> {
        let b = Self { view1, view2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.view1.len() != self.view2.len() {
            return Err(Error::DimensionMismatch(format!(
                "views have {} and {} entries",
                self.view1.len(),
                self.view2.len()
            )));
        }
        if self.view1.len() < 2 {
            return Err(Error::InvalidArgument("a view batch needs N >= 2".into()));
        }
        check_units(self.view1.iter().chain(&self.view2))
    }

    pub fn len(&self) -> usize {
        self.view1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view1.is_empty()
    }
}

/// `n` segment embeddings per trajectory, `segments[i][k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBatch {
    pub segments: Vec<Vec<Vec<f64>>>,
}

impl SegmentBatch {
    pub fn new(segments: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = segments.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::InvalidArgument("each trajectory needs >= 1 segment".into()));
        }
        if segments.iter().any(|s| s.len() != n) {
            return Err(Error::DimensionMismatch(
                "every trajectory must carry the same number of segments".into(),
            ));
        }
        check_units(segments.iter().flatten())?;
        Ok(Self { segments })
    }

    pub fn n_trajectories(&self) -> usize {
        self.segments.len()
    }

    pub fn per_trajectory(&self) -> usize {
        self.segments.first().map_or(0, Vec::len)
    }
}

fn check_units<'a>(vs: impl Iterator<Item = &'a Vec<f64>>) -> Result<()> {
    for v in vs {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "expected unit vectors, found norm {norm}"
            )));
        }
    }
    Ok(())
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be > 0, got {rho}")))
    }
}

/// InfoNCE with the positive in the denominator.
pub fn info_nce(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], rho: f64) -> Result<f64> {
    info_nce_with(anchor, positive, negatives, rho, InfoNceVariant::NtXent)
}

pub fn info_nce_with(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    rho: f64,
    variant: InfoNceVariant,
) -> Result<f64> {
    check_rho(rho)?;
    if negatives.is_empty() {
        return Err(Error::InvalidArgument("InfoNCE needs at least one negative".into()));
    }
    let pos = cosine_similarity(anchor, positive) / rho;
    // logits relative to the positive
    let rel = negatives.iter().map(|n| cosine_similarity(anchor, n) / rho - pos);
    Ok(match variant {
        InfoNceVariant::NtXent => log1p_sum_exp(rel),
        InfoNceVariant::Literal => log_sum_exp(rel),
    })
}

/// `ln(1 + Σ exp(x_k))` without overflow and without losing tiny values.
fn log1p_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        xs.map(f64::exp).sum::<f64>().ln_1p()
    } else {
        max + ((-max).exp() + xs.map(|x| (x - max).exp()).sum::<f64>()).ln()
    }
}

/// Symmetric trajectory-level loss averaged over all `2N` anchor roles.
pub fn cls_loss(batch: &ViewBatch, rho: f64) -> Result<f64> {
    cls_loss_with(batch, rho, InfoNceVariant::NtXent)
}

pub fn cls_loss_with(batch: &ViewBatch, rho: f64, variant: InfoNceVariant) -> Result<f64> {
    batch.validate()?;
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        for (anchors, partners) in [(&batch.view1, &batch.view2), (&batch.view2, &batch.view1)] {
            let negatives: Vec<&[f64]> = match variant {
                InfoNceVariant::NtXent => (0..n)
                    .filter(|&j| j != i)
                    .flat_map(|j| [batch.view1[j].as_slice(), batch.view2[j].as_slice()])
                    .collect(),
                InfoNceVariant::Literal => (0..n)
                    .filter(|&j| j != i)
                    .map(|j| partners[j].as_slice())
                    .collect(),
            };
            total += info_nce_with(&anchors[i], &partners[i], &negatives, rho, variant)?;
        }
    }
    Ok(total / (2 * n) as f64)
}

/// Trajectory-to-segment loss.
///
/// For trajectory `i` and segment `k` the pair `(z_i, s_ik)` is positive in
/// both anchor directions; negatives are `z_j` and `s_jk` for every `j != i`.
pub fn seg_loss(trajectories: &EmbeddingSet, segs: &SegmentBatch, rho: f64) -> Result<f64> {
    let n = trajectories.len();
    if n != segs.n_trajectories() {
        return Err(Error::DimensionMismatch(format!(
            "{} trajectory embeddings but {} segment groups",
            n,
            segs.n_trajectories()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("segment loss needs >= 2 trajectories".into()));
    }
    let per = segs.per_trajectory();
    let mut total = 0.0;
    for i in 0..n {
        let z = trajectories.vector(i);
        for k in 0..per {
            let s = segs.segments[i][k].as_slice();
            let negatives: Vec<&[f64]> = (0..n)
                .filter(|&j| j != i)
                .flat_map(|j| [trajectories.vector(j), segs.segments[j][k].as_slice()])
                .collect();
            total += info_nce(z, s, &negatives, rho)?;
            total += info_nce(s, z, &negatives, rho)?;
        }
    }
    Ok(total / (2 * n * per) as f64)
}

/// Loss over the `C(n, 2)` unique segment pairs `(k, j)`, `k < j`, of each
/// trajectory. Segment `k` anchors, segment `j` is the positive, and the
/// negatives are segments `k` and `j` of every other trajectory.
pub fn pair_loss(segs: &SegmentBatch, rho: f64) -> Result<f64> {
    let n = segs.n_trajectories();
    let per = segs.per_trajectory();
    if per < 2 {
        return Err(Error::InvalidArgument("pair loss needs >= 2 segments per trajectory".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("pair loss needs >= 2 trajectories".into()));
    }
    let pairs = per * (per - 1) / 2;
    let mut total = 0.0;
    for i in 0..n {
        let mut own = 0.0;
        for k in 0..per {
            for j in (k + 1)..per {
                let negatives: Vec<&[f64]> = (0..n)
                    .filter(|&o| o != i)
                    .flat_map(|o| [segs.segments[o][k].as_slice(), segs.segments[o][j].as_slice()])
                    .collect();
                own += info_nce(&segs.segments[i][k], &segs.segments[i][j], &negatives, rho)?;
            }
        }
        total += own / pairs as f64;
    }
    Ok(total / n as f64)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Jensen-Shannon Deep InfoMax term from precomputed discriminator scores:
/// `-mean(log sigmoid(joint)) - mean(log(1 - sigmoid(marginal)))`.
pub fn dim_loss(joint: &[f64], marginal: &[f64]) -> Result<f64> {
    if joint.is_empty() || marginal.is_empty() {
        return Err(Error::InvalidArgument("DIM needs joint and marginal scores".into()));
    }
    if joint.iter().chain(marginal).any(|x| x.is_nan()) {
        return Err(Error::NonFinite("DIM scores".into()));
    }
    let j = joint.iter().map(|x| softplus(-x)).sum::<f64>() / joint.len() as f64;
    let m = marginal.iter().map(|x| softplus(*x)).sum::<f64>() / marginal.len() as f64;
    Ok(j + m)
}

/// Reference discriminator `z^T Phi l`.
pub fn bilinear_score(global: &[f64], phi: &[Vec<f64>], local: &[f64]) -> Result<f64> {
    if phi.len() != global.len() || phi.iter().any(|r| r.len() != local.len()) {
        return Err(Error::DimensionMismatch("bilinear scorer shape".into()));
    }
    Ok(global
        .iter()
        .zip(phi)
        .map(|(g, row)| g * row.iter().zip(local).map(|(p, l)| p * l).sum::<f64>())
        .sum())
}

/// Joint and marginal scores from a bilinear scorer: trajectory `i` with
/// its own segments (joint) and with segments of trajectory `i + 1 mod N`
/// (marginal).
pub fn bilinear_dim_scores(
    trajectories: &EmbeddingSet,
    segs: &SegmentBatch,
    phi: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = trajectories.len();
    if n != segs.n_trajectories() || n < 2 {
        return Err(Error::DimensionMismatch(
            "need matching trajectory and segment counts, N >= 2".into(),
        ));
    }
    let mut joint = Vec::new();
    let mut marginal = Vec::new();
    for i in 0..n {
        let z = trajectories.vector(i);
        for s in &segs.segments[i] {
            joint.push(bilinear_score(z, phi, s)?);
        }
        for s in &segs.segments[(i + 1) % n] {
            marginal.push(bilinear_score(z, phi, s)?);
        }
    }
    Ok((joint, marginal))
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.alpha * c.cls + w.beta * c.dim + w.gamma * c.seg + w.delta * c.pair
}

/// Mean cosine drift `1 - a_i . b_i` between new and reference embeddings.
pub fn stability_loss(new: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if new.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} new embeddings vs {} reference",
            new.len(),
            reference.len()
        )));
    }
    if new.is_empty() {
        return Err(Error::InvalidArgument("stability loss of an empty batch".into()));
    }
    check_units(new.iter().chain(reference))?;
    let sum: f64 = new
        .iter()
        .zip(reference)
        .map(|(a, b)| 1.0 - crate::dot(a, b))
        .sum();
    Ok(sum / new.len() as f64)
}

/// Segment sampling parameters. `length = None` means `max(2, T / 4)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub count: usize,
    pub length: Option<usize>,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        Self {
            count: 4,
            length: None,
        }
    }
}

/// Cut `count` windows of `length` rows with start `q` uniform over
/// `0..=T - length`. Segment ids are `<id>#<k>`.
pub fn sample_segments(t: &Trajectory, spec: &SegmentSpec, seed: u64) -> Result<Vec<Trajectory>> {
    let total = t.len();
    let length = spec.length.unwrap_or((total / 4).max(2));
    if spec.count == 0 {
        return Err(Error::InvalidArgument("segment count must be >= 1".into()));
    }
    if length < 2 || length > total {
        return Err(Error::InvalidArgument(format!(
            "segment length {length} invalid for T = {total}"
        )));
    }
    let mut r = rng::seeded(seed);
    Ok((0..spec.count)
        .map(|k| {
            let q = r.random_range(0..=total - length);
            Trajectory {
                id: format!("{}#{k}", t.id),
                states: t.states[q..q + length].to_vec(),
                actions: t.actions[q..q + length].to_vec(),
                label: t.label,
            }
        })
        .collect())
}
