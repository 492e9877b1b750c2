//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use modeclust::dataset::{Dataset, Trajectory};
use modeclust::WeightedKnnGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

fn counts(labels: &[i64]) -> BTreeMap<i64, f64> {
    let mut m = BTreeMap::new();
    for &l in labels {
        *m.entry(l).or_insert(0.0) += 1.0;
    }
    m
}

/// Mutual information from joint probabilities, normalized by the mean
/// entropy.
pub fn nmi(a: &[i64], b: &[i64]) -> f64 {
    let n = a.len() as f64;
    let ca = counts(a);
    let cb = counts(b);
    let h = |c: &BTreeMap<i64, f64>| -> f64 { c.values().map(|&x| -(x / n) * (x / n).ln()).sum() };
    let (ha, hb) = (h(&ca), h(&cb));
    if ca.len() == 1 && cb.len() == 1 {
        return 1.0;
    }
    if ca.len() == 1 || cb.len() == 1 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (&la, &na) in &ca {
        for (&lb, &nb) in &cb {
            let nij = a.iter().zip(b).filter(|&(&x, &y)| x == la && y == lb).count() as f64;
            if nij > 0.0 {
                let pij = nij / n;
                mi += pij * (pij / ((na / n) * (nb / n))).ln();
            }
        }
    }
    mi / (0.5 * (ha + hb))
}

/// Pair-counting ARI over every unordered pair.
pub fn ari(a: &[i64], b: &[i64]) -> f64 {
    let (mut ss, mut sd, mut ds, mut dd) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if den == 0.0 {
        return 1.0;
    }
    2.0 * (ss * dd - sd * ds) / den
}

pub fn silhouette(points: &[Vec<f64>], labels: &[i64]) -> f64 {
    let clusters: Vec<i64> = counts(labels).keys().copied().filter(|&l| l >= 0).collect();
    let mut total = 0.0;
    let mut n = 0.0;
    for i in 0..points.len() {
        if labels[i] < 0 {
            continue;
        }
        n += 1.0;
        let mean_to = |c: i64| {
            let others: Vec<usize> = (0..points.len()).filter(|&j| j != i && labels[j] == c).collect();
            others.iter().map(|&j| cos_dist(&points[i], &points[j])).sum::<f64>() / others.len() as f64
        };
        let own = labels.iter().filter(|&&l| l == labels[i]).count();
        if own == 1 {
            continue;
        }
        let a = mean_to(labels[i]);
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n
}

/// Dense adjacency of a graph.
pub fn dense(g: &WeightedKnnGraph) -> Vec<Vec<f64>> {
    let n = g.n_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (i, j, w) in g.edges() {
        a[i][j] = w;
        a[j][i] = w;
    }
    a
}

/// `Q_γ` straight from the definition; noise points are singletons.
pub fn modularity(a: &[Vec<f64>], labels: &[i64], gamma: f64) -> f64 {
    let n = a.len();
    let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            let same = i == j || (labels[i] >= 0 && labels[i] == labels[j]);
            if same {
                q += a[i][j] - gamma * k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Every set partition of `n` elements as restricted growth strings.
pub fn all_partitions(n: usize) -> Vec<Vec<i64>> {
    fn rec(i: usize, n: usize, max: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max + 1 {
            cur.push(l);
            rec(i + 1, n, max.max(l), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, -1, &mut Vec::new(), &mut out);
    out
}

pub fn random_unit(r: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Gaussian blob on the sphere around `center`.
pub fn blob(r: &mut ChaCha8Rng, center: &[f64], spread: f64, count: usize) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    (0..count)
        .map(|_| {
            let v: Vec<f64> = center
                .iter()
                .map(|c| c + spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, r))
                .collect();
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect()
}

pub fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// One-dimensional state/action dataset with a single long trajectory.
pub fn column_dataset(states: &[f64], actions: &[f64]) -> Dataset {
    Dataset::new(vec![Trajectory {
        id: "col".into(),
        states: states.iter().map(|&x| vec![x]).collect(),
        actions: actions.iter().map(|&x| vec![x]).collect(),
        label: None,
    }])
    .unwrap()
}

/// Two-sided KS statistic of a sample against the standard normal CDF.
pub fn ks_normal(sample: &[f64]) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let phi = Normal::standard();
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = phi.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
