//! Behavioral-mode discovery for multi-intention trajectory datasets.
//!
//! The pipeline runs in stages that each consume plain data:
//!
//! 1. [`dataset`]: load or synthesize trajectories and quantile-normalize them.
//! 2. [`embedder`]: map each trajectory onto the unit hypersphere using
//!    random Fourier features and mean pooling.
//! 3. [`dynamics`]: finite-difference control-sensitivity features plus the
//!    correlation gate that decides whether they reweight graph edges.
//! 4. [`graph`] and [`community`]: the weighted k-NN graph and Leiden
//!    optimization of resolution-scaled modularity.
//! 5. [`sweep`]: isolated-component detection and the joint (k, resolution)
//!    stability sweep.
//! 6. [`adapt`]: recover a known number of clusters as anchors, then assign
//!    new data to them and sub-cluster whatever they miss.
//!
//! [`losses`] and [`metrics`] are pure evaluators used for verification.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod community;
pub mod dataset;
pub mod dynamics;
pub mod embedder;
pub mod error;
pub mod graph;
pub mod jsonl;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod sweep;

pub use community::Partition;
pub use dataset::{Dataset, Trajectory};
pub use embedder::{Embedding, EmbeddingSet};
pub use error::{Error, Result};
pub use graph::WeightedKnnGraph;

/// Label for points that belong to no cluster.
pub const NOISE: i64 = -1;

/// Cosine distance `1 - cos(a, b)`. Returns 1 when either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine_similarity(a, b)
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot = dot(a, b);
    let na = dot_self(a).sqrt();
    let nb = dot_self(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot_self(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}
