//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use modeclust::adapt;
use modeclust::community::{self, Partition};
use modeclust::dataset::{synth_generate, Dataset, QuantileNormalizer, SynthConfig};
use modeclust::dynamics::{self, BehavFeatures, FeatureMap};
use modeclust::embedder::{normalize_and_embed, EmbeddingSet, RffConfig};
use modeclust::graph::{self, WeightedKnnGraph};
use modeclust::losses::{self, InfoNceVariant, SegmentBatch, ViewBatch};
use modeclust::metrics::{self, MetricReport};
use modeclust::sweep::{self, SweepConfig};
use modeclust::jsonl;
use nalgebra::DMatrix;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}

fn embed(data: &Dataset, seed: u64) -> EmbeddingSet {
    normalize_and_embed(data, &RffConfig { seed, ..RffConfig::default() }).unwrap()
}

const RUNTIME_LIMIT: Duration = Duration::from_secs(60);

fn separable_recovery() -> Outcome {
    let (res, elapsed) = single_threaded(|| {
        let start = Instant::now();
        let data = synth_generate(&SynthConfig::default()).unwrap();
        let emb = embed(&data, 0);
        let feats = dynamics::extract_all(&data).unwrap();
        let cfg = SweepConfig::for_n(emb.len());
        let found = sweep::discover_modes(&emb, &cfg, Some(&feats)).unwrap();
        let truth = data.labels().unwrap();
        let nmi = metrics::nmi(found.partition.labels(), &truth).unwrap();
        let ari = metrics::ari(found.partition.labels(), &truth).unwrap();
        ((nmi, ari, found.partition.n_clusters()), start.elapsed())
    });
    let (nmi, ari, k) = res;
    check(nmi == 1.0 && ari == 1.0, format!("NMI {nmi}, ARI {ari}, {k} clusters"))?;
    check(elapsed < RUNTIME_LIMIT, format!("took {elapsed:?}"))?;
    Ok(format!("K={k} NMI={nmi} ARI={ari} in {:.2}s single-threaded", elapsed.as_secs_f64()))
}

fn adaptation() -> Outcome {
    let start = Instant::now();
    let data = synth_generate(&SynthConfig::default()).unwrap();
    let emb = embed(&data, 0);
    let truth = data.labels().unwrap();
    let k_star = 6;
    let k_base = k_star / 2;
    let seen_idx: Vec<usize> = (0..emb.len()).filter(|&i| truth[i] < k_base as i64).collect();
    let online_idx: Vec<usize> = (0..emb.len()).filter(|&i| truth[i] >= k_base as i64).collect();
    let seen = emb.select(&seen_idx).unwrap();
    let online = emb.select(&online_idx).unwrap();
    let cfg = SweepConfig::for_n(seen.len());
    let res = adapt::adapt(&seen, &online, k_base, adapt::DEFAULT_THETA, adapt::DEFAULT_EXPANSION, &cfg)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let combined = res.combined_labels();
    let combined_truth: Vec<i64> = seen_idx.iter().chain(&online_idx).map(|&i| truth[i]).collect();
    let k_hat = metrics::count_clusters(&combined);
    let nmi = metrics::nmi(&combined, &combined_truth).unwrap();

    // Each baseline mode must keep >= 99% of its members under one recovered id.
    let mut worst = 1.0f64;
    let mut majority_ids = BTreeSet::new();
    for mode in 0..k_base as i64 {
        let mut votes: BTreeMap<i64, usize> = BTreeMap::new();
        let members: Vec<i64> = (0..seen.len())
            .filter(|&i| combined_truth[i] == mode)
            .map(|i| res.seen_labels[i])
            .collect();
        for &l in &members {
            *votes.entry(l).or_default() += 1;
        }
        let (&label, &count) = votes.iter().max_by_key(|(_, &c)| c).unwrap();
        check(label >= 0 && label < k_base as i64, format!("mode {mode} majority label {label}"))?;
        majority_ids.insert(label);
        worst = worst.min(count as f64 / members.len() as f64);
    }
    check(majority_ids.len() == k_base, "two baseline modes share a recovered id")?;
    check(k_hat == k_star, format!("K_hat = {k_hat}"))?;
    check(worst >= 0.99, format!("retention {worst}"))?;
    check(nmi >= 0.95, format!("NMI {nmi}"))?;
    check(elapsed < RUNTIME_LIMIT, format!("took {elapsed:?}"))?;
    Ok(format!(
        "K_hat={k_hat} retention={worst:.4} NMI={nmi:.4} novel={:?} in {:.2}s",
        res.novel_ids,
        elapsed.as_secs_f64()
    ))
}

fn random_graph(seed: u64) -> WeightedKnnGraph {
    let mut r = common::rng(seed);
    loop {
        let mut edges = Vec::new();
        for i in 0..8 {
            for j in i + 1..8 {
                if r.random::<f64>() < 0.4 {
                    edges.push((i, j, 0.1 + 0.9 * r.random::<f64>()));
                }
            }
        }
        if !edges.is_empty() {
            return WeightedKnnGraph::from_edges(8, &edges).unwrap();
        }
    }
}

fn modularity_oracle() -> Outcome {
    let partitions = common::all_partitions(8);
    check(partitions.len() == 4140, "Bell(8) enumeration")?;
    let mut worst_gap = 0.0f64;
    for seed in 0..20 {
        let g = random_graph(1000 + seed);
        let a = common::dense(&g);
        let best = partitions
            .iter()
            .map(|p| common::modularity(&a, p, 1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        let found = community::leiden(&g, 1.0, seed).unwrap();
        let q = common::modularity(&a, found.labels(), 1.0);
        let lib_q = community::modularity(&g, &found, 1.0).unwrap();
        check((q - lib_q).abs() < 1e-12, format!("graph {seed}: library Q {lib_q} vs oracle {q}"))?;
        check(q >= best - 0.02, format!("graph {seed}: Leiden Q {q} vs optimum {best}"))?;
        worst_gap = worst_gap.max(best - q);
    }
    let mut edges = Vec::new();
    for base in [0, 4] {
        for i in 0..4 {
            for j in i + 1..4 {
                edges.push((base + i, base + j, 1.0));
            }
        }
    }
    let cliques = WeightedKnnGraph::from_edges(8, &edges).unwrap();
    let p = community::leiden(&cliques, 1.0, 0).unwrap();
    let q = community::modularity(&cliques, &p, 1.0).unwrap();
    check((q - 0.5).abs() < 1e-12, format!("two cliques Q = {q}"))?;
    Ok(format!("max gap to optimum over 20 graphs {worst_gap:.2e}; two cliques Q = {q}"))
}

fn metric_oracles() -> Outcome {
    let mut r = common::rng(4);
    let mut max_err = 0.0f64;
    for inst in 0..100 {
        let n = r.random_range(2..=30);
        let ka = r.random_range(1..=5);
        let kb = r.random_range(1..=5);
        let a: Vec<i64> = (0..n).map(|_| r.random_range(0..ka)).collect();
        let b: Vec<i64> = (0..n).map(|_| r.random_range(-1..kb)).collect();
        let nmi = metrics::nmi(&a, &b).unwrap();
        let ari = metrics::ari(&a, &b).unwrap();
        let e1 = (nmi - common::nmi(&a, &b)).abs();
        let e2 = (ari - common::ari(&a, &b)).abs();
        check(e1 < 1e-12 && e2 < 1e-12, format!("instance {inst}: NMI err {e1}, ARI err {e2}"))?;
        max_err = max_err.max(e1).max(e2);
        let points: Vec<Vec<f64>> = (0..n).map(|_| common::random_unit(&mut r, 4)).collect();
        if metrics::count_clusters(&b) >= 2 {
            let emb = EmbeddingSet::from_vectors(&points).unwrap();
            let s = metrics::silhouette(&emb, &b).unwrap();
            let e3 = (s - common::silhouette(&points, &b)).abs();
            check(e3 < 1e-12, format!("instance {inst}: silhouette err {e3}"))?;
            max_err = max_err.max(e3);
        }
    }
    let hand = metrics::ari(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap();
    check(hand == -0.5, format!("hand-derived ARI = {hand}"))?;
    Ok(format!("100 instances, max deviation {max_err:.1e}; ARI hand case = {hand}"))
}

fn random_orthogonal(r: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |_, _| r.random::<f64>() * 2.0 - 1.0);
    m.qr().q()
}

fn rotate(q: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (q * nalgebra::DVector::from_column_slice(v)).iter().copied().collect()
}

fn loss_evaluators() -> Outcome {
    let e = std::f64::consts::E;
    let (x, y) = (vec![1.0, 0.0], vec![0.0, 1.0]);
    let v = losses::info_nce(&x, &x, &[&y, &y], 1.0).unwrap();
    let expected = -(e / (e + 2.0)).ln();
    check((v - expected).abs() < 1e-9, format!("info_nce {v}"))?;
    let d = losses::dim_loss(&[0.0], &[0.0]).unwrap();
    check((d - 2.0 * 2f64.ln()).abs() < 1e-9, format!("dim_loss {d}"))?;
    let s0 = losses::stability_loss(std::slice::from_ref(&x), std::slice::from_ref(&x)).unwrap();
    let s2 = losses::stability_loss(std::slice::from_ref(&x), &[vec![-1.0, 0.0]]).unwrap();
    let s1 = losses::stability_loss(std::slice::from_ref(&x), std::slice::from_ref(&y)).unwrap();
    check(s0.abs() < 1e-9 && (s1 - 1.0).abs() < 1e-9 && (s2 - 2.0).abs() < 1e-9, "stability extremes")?;

    let mut r = common::rng(5);
    let dim = 6;
    let (n, segs_per) = (5, 3);
    let view1: Vec<Vec<f64>> = (0..n).map(|_| common::random_unit(&mut r, dim)).collect();
    let view2: Vec<Vec<f64>> = (0..n).map(|_| common::random_unit(&mut r, dim)).collect();
    let traj: Vec<Vec<f64>> = (0..n).map(|_| common::random_unit(&mut r, dim)).collect();
    let segs: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| (0..segs_per).map(|_| common::random_unit(&mut r, dim)).collect())
        .collect();
    let phi: Vec<Vec<f64>> = (0..dim).map(|_| (0..dim).map(|_| r.random::<f64>() - 0.5).collect()).collect();
    let q = random_orthogonal(&mut r, dim);
    let rot = |vs: &[Vec<f64>]| vs.iter().map(|v| rotate(&q, v)).collect::<Vec<_>>();
    let phi_m = DMatrix::from_fn(dim, dim, |i, j| phi[i][j]);
    let phi_rot = &q * phi_m * q.transpose();
    let phi_rot: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| phi_rot[(i, j)]).collect()).collect();

    let eval = |v1: &[Vec<f64>], v2: &[Vec<f64>], t: &[Vec<f64>], s: &[Vec<Vec<f64>>], p: &[Vec<f64>], rho: f64| {
        let batch = ViewBatch::new(v1.to_vec(), v2.to_vec()).unwrap();
        let sb = SegmentBatch::new(s.to_vec()).unwrap();
        let te = EmbeddingSet::from_vectors(t).unwrap();
        let negs: Vec<&[f64]> = v2[1..].iter().map(Vec::as_slice).collect();
        let (joint, marginal) = losses::bilinear_dim_scores(&te, &sb, p).unwrap();
        vec![
            losses::info_nce(&v1[0], &v2[0], &negs, rho).unwrap(),
            losses::cls_loss(&batch, rho).unwrap(),
            losses::cls_loss_with(&batch, rho, InfoNceVariant::Literal).unwrap(),
            losses::seg_loss(&te, &sb, rho).unwrap(),
            losses::pair_loss(&sb, rho).unwrap(),
            losses::dim_loss(&joint, &marginal).unwrap(),
            losses::stability_loss(v1, v2).unwrap(),
        ]
    };
    let segs_rot: Vec<Vec<Vec<f64>>> = segs.iter().map(|s| rot(s)).collect();
    let mut max_dev = 0.0f64;
    for rho in [0.1, 0.5, 0.01] {
        let base = eval(&view1, &view2, &traj, &segs, &phi, rho);
        let turned = eval(&rot(&view1), &rot(&view2), &rot(&traj), &segs_rot, &phi_rot, rho);
        for (a, b) in base.iter().zip(&turned) {
            check(a.is_finite() && b.is_finite(), format!("non-finite loss at rho {rho}"))?;
            max_dev = max_dev.max((a - b).abs());
        }
    }
    check(max_dev < 1e-9, format!("rotation changed a loss by {max_dev}"))?;
    Ok(format!("info_nce={v:.4} dim=2ln2 stability {{0,1,2}}; rotation deviation {max_dev:.1e}; finite at rho=0.01"))
}

fn gate_and_reweight() -> Outcome {
    let mut r = common::rng(6);
    let n = 200;
    let vectors: Vec<Vec<f64>> = (0..n).map(|_| common::random_unit(&mut r, 8)).collect();
    let emb = EmbeddingSet::from_vectors(&vectors).unwrap();
    let ids: Vec<String> = emb.ids().into_iter().map(String::from).collect();
    let dup: FeatureMap = ids
        .iter()
        .zip(&vectors)
        .map(|(id, v)| (id.clone(), BehavFeatures(v.as_slice().try_into().unwrap())))
        .collect();
    let redundant = dynamics::redundancy_check(&emb, &dup, 0).unwrap();
    check(!redundant.use_features, format!("duplicated features kept: {redundant:?}"))?;

    let indep: FeatureMap = ids
        .iter()
        .map(|id| {
            let f: [f64; 8] = std::array::from_fn(|_| r.random::<f64>() * 2.0 - 1.0);
            (id.clone(), BehavFeatures(f))
        })
        .collect();
    let fresh = dynamics::redundancy_check(&emb, &indep, 0).unwrap();
    check(
        fresh.use_features && fresh.pearson.abs() < 0.2 && fresh.spearman.abs() < 0.2,
        format!("independent features: {fresh:?}"),
    )?;

    for alpha in [0.0, 0.3, 1.0] {
        check(graph::reweight_factor(alpha, 0.5) == 1.0, "b = 0.5 must leave weights unchanged")?;
    }
    let g = graph::build_knn_graph(&emb, 10, 1.0).unwrap();
    let same = graph::reweight_edges(&g, &indep, 0.0, None).unwrap();
    check(same.edges() == g.edges(), "alpha = 0 must be the identity")?;
    Ok(format!(
        "duplicate avg corr {:.3} -> skip; independent pearson {:.3} spearman {:.3} -> use; identities exact",
        redundant.average, fresh.pearson, fresh.spearman
    ))
}

fn quantile_normalization() -> Outcome {
    let mut r = common::rng(7);
    let raw: Vec<f64> = (0..1000).map(|_| (3.0 * r.random::<f64>()).exp() + r.random::<f64>().powi(3)).collect();
    let data = common::column_dataset(&raw, &raw);
    let qn = QuantileNormalizer::fit(&data);
    let z: Vec<f64> = raw.iter().map(|&x| qn.transform_value(0, x)).collect();
    let ks = common::ks_normal(&z);
    check(ks < 0.05, format!("KS {ks}"))?;

    for col in 0..1000 {
        let len = r.random_range(2..60);
        let vals: Vec<f64> = (0..len).map(|_| (r.random::<f64>() * 20.0).round() - 10.0).collect();
        let qn = QuantileNormalizer::fit(&common::column_dataset(&vals, &vals));
        let mut probes: Vec<f64> = (0..200).map(|i| -12.0 + 24.0 * i as f64 / 199.0).collect();
        probes.extend(&vals);
        probes.sort_by(f64::total_cmp);
        let out: Vec<f64> = probes.iter().map(|&x| qn.transform_value(0, x)).collect();
        check(out.windows(2).all(|w| w[0] <= w[1]), format!("column {col} not monotone"))?;
        let mut distinct = vals.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let fitted: Vec<f64> = distinct.iter().map(|&x| qn.transform_value(0, x)).collect();
        check(fitted.windows(2).all(|w| w[0] < w[1]), format!("column {col} not strictly increasing"))?;
    }
    Ok(format!("KS={ks:.4} at N=1000; 1000 columns monotone"))
}

fn write_stage_outputs(dir: &Path) {
    let data = synth_generate(&SynthConfig {
        n_modes: 3,
        per_mode: 40,
        separation: 1.0,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    data.save(&dir.join("data.jsonl")).unwrap();
    let data = Dataset::load(&dir.join("data.jsonl")).unwrap();
    let emb = embed(&data, 11);
    emb.save(&dir.join("emb.jsonl")).unwrap();
    let feats = dynamics::extract_all(&data).unwrap();
    dynamics::save_features(&dir.join("features.jsonl"), &data.ids(), &feats).unwrap();

    let mut cfg = SweepConfig::for_n(emb.len());
    cfg.seed = 11;
    let found = sweep::discover_modes(&emb, &cfg, Some(&feats)).unwrap();
    jsonl::write_json(&dir.join("discovery.json"), &found).unwrap();
    let swept = sweep::joint_sweep(&emb, &cfg, Some(&feats)).unwrap();
    jsonl::write_json(&dir.join("sweep.json"), &swept).unwrap();
    adapt::build_registry(&emb, &found.partition)
        .unwrap()
        .save(&dir.join("registry.json"))
        .unwrap();

    let truth = data.labels().unwrap();
    let seen_idx: Vec<usize> = (0..emb.len()).filter(|&i| truth[i] < 2).collect();
    let online_idx: Vec<usize> = (0..emb.len()).filter(|&i| truth[i] == 2).collect();
    let res = adapt::adapt(
        &emb.select(&seen_idx).unwrap(),
        &emb.select(&online_idx).unwrap(),
        2,
        adapt::DEFAULT_THETA,
        adapt::DEFAULT_EXPANSION,
        &SweepConfig::for_n(seen_idx.len()),
    )
    .unwrap();
    jsonl::write_json(&dir.join("adaptation.json"), &res).unwrap();

    let labels = found.partition.labels();
    let report = MetricReport {
        nmi: Some(metrics::nmi(labels, &truth).unwrap()),
        ari: Some(metrics::ari(labels, &truth).unwrap()),
        silhouette: metrics::silhouette(&emb, labels).ok(),
        n_clusters_pred: metrics::count_clusters(labels),
        n_clusters_true: Some(metrics::count_clusters(&truth)),
    };
    jsonl::write_json(&dir.join("report.json"), &report).unwrap();
    let leiden = community::leiden(&graph::build_knn_graph(&emb, 10, 1.0).unwrap(), 0.5, 11).unwrap();
    jsonl::write_json(&dir.join("leiden.json"), &leiden).unwrap();
    let _: Partition = jsonl::read_json(&dir.join("leiden.json")).unwrap();
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_stage_outputs(a.path());
    write_stage_outputs(b.path());
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in &names {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        check(x == y, format!("{name} differs between runs"))?;
    }
    Ok(format!("{} stage outputs byte-identical: {}", names.len(), names.join(", ")))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("separable-mode recovery", separable_recovery),
        ("adaptation analog", adaptation),
        ("modularity oracle", modularity_oracle),
        ("metric oracles", metric_oracles),
        ("loss evaluators", loss_evaluators),
        ("reweighting and gate", gate_and_reweight),
        ("quantile normalization", quantile_normalization),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
