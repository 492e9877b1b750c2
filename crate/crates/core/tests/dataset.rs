mod common;

use modeclust::dataset::{synth_generate, Dataset, QuantileNormalizer, SynthConfig, Trajectory};
use modeclust::Error;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn traj(id: &str, ds: usize, t: usize) -> Trajectory {
    Trajectory {
        id: id.into(),
        states: (0..t).map(|i| vec![i as f64; ds]).collect(),
        actions: (0..t).map(|i| vec![-(i as f64)]).collect(),
        label: Some(0),
    }
}

#[test]
fn load_two_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    std::fs::write(
        &path,
        "{\"id\":\"a\",\"states\":[[0,1],[1,2]],\"actions\":[[0.5],[1]],\"label\":0}\n\
         \n\
         {\"id\":\"b\",\"states\":[[2,1],[1,0],[0,0]],\"actions\":[[1],[2],[3]],\"label\":null}\n",
    )
    .unwrap();
    let d = Dataset::load(&path).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!((d.state_dim(), d.action_dim()), (2, 1));
    assert!(!d.has_labels());
}

#[test]
fn load_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert!(matches!(Dataset::load(&empty), Err(Error::EmptyDataset)));

    let ragged = dir.path().join("ragged.jsonl");
    std::fs::write(
        &ragged,
        "{\"id\":\"a\",\"states\":[[0,1],[1,2]],\"actions\":[[0],[1]],\"label\":null}\n\
         {\"id\":\"b\",\"states\":[[0,1,2],[1,2,3]],\"actions\":[[0],[1]],\"label\":null}\n",
    )
    .unwrap();
    assert!(matches!(Dataset::load(&ragged), Err(Error::DimensionMismatch(_))));

    let broken = dir.path().join("broken.jsonl");
    std::fs::write(
        &broken,
        "{\"id\":\"a\",\"states\":[[0],[1]],\"actions\":[[0],[1]],\"label\":null}\n{\"id\": oops}\n",
    )
    .unwrap();
    assert!(matches!(Dataset::load(&broken), Err(Error::Parse { line: 2, .. })));

    let missing = dir.path().join("nope.jsonl");
    assert!(matches!(Dataset::load(&missing), Err(Error::Io { .. })));
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let d = synth_generate(&SynthConfig {
        n_modes: 3,
        per_mode: 4,
        horizon: 7,
        ..SynthConfig::default()
    })
    .unwrap();
    d.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, d);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert!(text.ends_with('\n') && !text.contains('\r'));
}

#[test]
fn synth_cardinality_and_determinism() {
    let cfg = SynthConfig::default();
    let a = synth_generate(&cfg).unwrap();
    assert_eq!(a.len(), 600);
    let labels = a.labels().unwrap();
    for m in 0..6 {
        assert_eq!(labels.iter().filter(|&&l| l == m).count(), 100);
    }
    assert!(a.trajectories().iter().all(|t| t.len() == 50));

    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("1.jsonl"), dir.path().join("2.jsonl"));
    a.save(&p1).unwrap();
    synth_generate(&cfg).unwrap().save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn zero_separation_modes_are_indistinguishable() {
    let d = synth_generate(&SynthConfig {
        n_modes: 2,
        per_mode: 10,
        horizon: 20,
        state_dim: 2,
        action_dim: 1,
        separation: 0.0,
        seed: 1,
    })
    .unwrap();
    for dim in 0..2 {
        let values = |mode: i64| -> Vec<f64> {
            d.trajectories()
                .iter()
                .filter(|t| t.label == Some(mode))
                .flat_map(|t| t.states.iter().map(move |s| s[dim]))
                .collect()
        };
        let (a, b) = (values(0), values(1));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let all: Vec<f64> = a.iter().chain(&b).copied().collect();
        let m = mean(&all);
        let pooled = (all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (all.len() - 1) as f64).sqrt();
        let gap = (mean(&a) - mean(&b)).abs();
        assert!(gap < 0.1 * pooled, "dim {dim}: gap {gap} vs pooled std {pooled}");
    }
}

#[test]
fn transform_preserves_rank_and_metadata() {
    let d = synth_generate(&SynthConfig {
        n_modes: 2,
        per_mode: 5,
        horizon: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let q = QuantileNormalizer::fit(&d);
    assert_eq!(q.dims(), 3);
    let out = q.transform(&d).unwrap();
    assert_eq!(out.ids(), d.ids());
    assert_eq!(out.labels(), d.labels());
    let column = |data: &Dataset, dim: usize| -> Vec<f64> {
        data.trajectories()
            .iter()
            .flat_map(|t| t.states.iter().map(move |s| s[dim]))
            .collect()
    };
    for dim in 0..2 {
        let (raw, z) = (column(&d, dim), column(&out, dim));
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                if raw[i] < raw[j] {
                    assert!(z[i] < z[j]);
                }
            }
        }
    }
    for dim in 0..3 {
        let r = q.reference(dim);
        assert!(r.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn standard_normal_input_passes_ks() {
    let mut r = common::rng(21);
    let x: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut r)).collect();
    let q = QuantileNormalizer::fit(&common::column_dataset(&x, &x));
    let z: Vec<f64> = x.iter().map(|&v| q.transform_value(0, v)).collect();
    assert!(common::ks_normal(&z) < 0.05);
    assert!(common::ks_normal(&x) < 0.05);
}

#[test]
fn states_and_actions_fit_separately() {
    let states: Vec<f64> = (0..10).map(f64::from).collect();
    let actions: Vec<f64> = (0..10).map(|i| 100.0 + f64::from(i)).collect();
    let q = QuantileNormalizer::fit(&common::column_dataset(&states, &actions));
    assert!((q.transform_value(0, 0.0) - q.transform_value(1, 100.0)).abs() < 1e-15);
    assert!((q.transform_value(0, 9.0) - q.transform_value(1, 109.0)).abs() < 1e-15);
}

#[test]
fn dataset_rejects_label_gaps() {
    let mut b = traj("b", 1, 3);
    b.label = None;
    let d = Dataset::new(vec![traj("a", 1, 3), b]).unwrap();
    assert!(!d.has_labels());
    assert!(d.labels().is_none());
}

proptest! {
    #[test]
    fn transform_is_monotone(values in prop::collection::vec(-50i32..50, 2..40), probes in prop::collection::vec(-80.0f64..80.0, 1..40)) {
        let col: Vec<f64> = values.iter().map(|&v| f64::from(v) / 4.0).collect();
        let q = QuantileNormalizer::fit(&common::column_dataset(&col, &col));
        let mut xs = probes.clone();
        xs.extend(&col);
        xs.sort_by(f64::total_cmp);
        let z: Vec<f64> = xs.iter().map(|&x| q.transform_value(0, x)).collect();
        prop_assert!(z.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(z.iter().all(|v| v.is_finite()));
    }
}
