// SPDX-License-Identifier: MIT OR Apache-2.0

use polvec_core::activation_store::{plant_synthetic, ActivationSet, PlantSpec};
use polvec_core::concept_vectors::{learn_all, learn_with, sign_convention_holds, Axis, LearnConfig, Method};
use polvec_core::corpus::{Dimension, Leaning, Split};
use polvec_core::detection_analysis::{
    accuracy, accuracy_on, baseline_single_axis, confound_fixture, correlation_grid, disentanglement, evaluate, pca_project,
};
use polvec_core::numkit::{cosine_similarity, dot};
use polvec_core::Error;
use proptest::prelude::*;

fn planted(seed: u64) -> (ActivationSet, std::collections::BTreeMap<Dimension, Vec<f64>>) {
    plant_synthetic(&PlantSpec::new(32, 2, 60, 4.0, 1.0, seed)).unwrap()
}

#[test]
fn every_learner_recovers_planted_directions() {
    let (set, dirs) = planted(1);
    let out = learn_all(&set, &Method::ALL, &LearnConfig::default());
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    for v in out.registry.iter() {
        let Axis::Dim(d) = v.axis else { continue };
        let c = cosine_similarity(&v.direction, &dirs[&d]).unwrap();
        assert!(c >= 0.95, "{}: cos {c}", v.key());
        assert!(sign_convention_holds(v, &set));
        let (acc, _) = accuracy(v, &set, Split::Test).unwrap().unwrap();
        assert!(acc >= 0.99, "{}: acc {acc}", v.key());
    }
}

#[test]
fn detection_report_summarizes_best_layers() {
    let (set, _) = planted(2);
    let out = learn_all(&set, &[Method::Caa, Method::Probe], &LearnConfig::default());
    let report = evaluate(&out.registry, &set, Split::Test).unwrap();
    assert_eq!(report.summary.len(), 2);
    for s in &report.summary {
        assert_eq!(s.best.len(), 4);
        assert!(s.mean >= 0.99 && s.variance >= 0.0);
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("method,dimension,layer,split,accuracy,n\n"));
    assert!(matches!(evaluate(&out.registry, &set, Split::Ood), Err(Error::EmptySplit(Split::Ood))));
}

#[test]
fn orthogonal_plant_is_disentangled() {
    let (set, _) = planted(3);
    let out = learn_all(&set, &Method::ALL, &LearnConfig::default());
    for method in Method::ALL {
        for layer in 1..=2 {
            let grid = correlation_grid(&out.registry, layer, method).unwrap();
            let s = disentanglement(&grid);
            assert!(s.cross_dim <= 0.2 && s.gap >= 0.7, "{method} L{layer}: {s:?}");
        }
    }
}

#[test]
fn pooled_baseline_loses_on_confounded_data() {
    let (set, _) = confound_fixture(5, 0.85).unwrap();
    let cfg = LearnConfig::default();
    for method in [Method::Caa, Method::Probe] {
        let base = baseline_single_axis(&set, 1, method, &cfg).unwrap();
        for d in Dimension::ALL {
            let own = learn_with(method, &set, Axis::Dim(d), 1, &cfg).unwrap();
            let (a_own, _) = accuracy(&own, &set, Split::Test).unwrap().unwrap();
            let (a_base, _) = accuracy_on(&base, &set, Some(d), Split::Test).unwrap().unwrap();
            assert!(a_base < a_own, "{method}/{d}: baseline {a_base} vs {a_own}");
        }
    }
}

#[test]
fn pooled_repe_locks_onto_one_confounded_pair() {
    let (set, _) = confound_fixture(5, 0.85).unwrap();
    let base = baseline_single_axis(&set, 1, Method::Repe, &LearnConfig::default()).unwrap();
    let perfect = Dimension::ALL
        .into_iter()
        .filter(|&d| accuracy_on(&base, &set, Some(d), Split::Test).unwrap().unwrap().0 == 1.0)
        .count();
    assert!(perfect >= 1);
}

#[test]
fn pooled_caa_points_at_mean_of_planted_directions() {
    let (set, dirs) = planted(4);
    let base = baseline_single_axis(&set, 1, Method::Caa, &LearnConfig::default()).unwrap();
    assert_eq!(base.axis, Axis::Pooled);
    let mean: Vec<f64> = (0..32).map(|k| dirs.values().map(|v| v[k]).sum::<f64>() / 4.0).collect();
    assert!(cosine_similarity(&base.direction, &mean).unwrap() >= 0.9);
}

#[test]
fn pooling_one_dimension_matches_per_dimension_vector() {
    let (set, _) = planted(6);
    let mut only = set.clone();
    only.records.retain(|r| r.dimension == Dimension::Civil);
    let cfg = LearnConfig::default();
    let base = baseline_single_axis(&only, 2, Method::Caa, &cfg).unwrap();
    let own = learn_with(Method::Caa, &only, Axis::Dim(Dimension::Civil), 2, &cfg).unwrap();
    assert_eq!(base.direction, own.direction);
    assert_eq!(base.raw_norm, own.raw_norm);
}

#[test]
fn projection_separates_classes_on_first_axis() {
    let (set, _) = plant_synthetic(&PlantSpec::new(16, 1, 40, 4.0, 0.5, 9)).unwrap();
    let p = pca_project(&set, 1, Some(Dimension::Civil)).unwrap();
    assert_eq!(p.points.len(), 80);
    let mean_x = |l: Leaning| {
        let xs: Vec<f64> = p.points.iter().filter(|q| q.label == l).map(|q| q.x).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    assert!((mean_x(Leaning::Left) - mean_x(Leaning::Right)).abs() > 4.0);
    assert!(dot(&p.axes[0], &p.axes[1]).abs() < 1e-9);
    assert!(p.variances[0] >= p.variances[1]);
}

fn small_plant() -> impl Strategy<Value = (u64, f64, Vec<f64>)> {
    (any::<u64>(), 0.1f64..10.0, prop::collection::vec(-50.0f64..50.0, 8))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn caa_is_translation_equivariant((seed, _scale, offset) in small_plant()) {
        let (set, _) = plant_synthetic(&PlantSpec::new(8, 1, 12, 2.0, 1.0, seed)).unwrap();
        let shifted = set.translated(&offset);
        let cfg = LearnConfig::default();
        let a = learn_with(Method::Caa, &set, Axis::Dim(Dimension::Eco), 1, &cfg).unwrap();
        let b = learn_with(Method::Caa, &shifted, Axis::Dim(Dimension::Eco), 1, &cfg).unwrap();
        for (x, y) in a.direction.iter().zip(&b.direction) {
            prop_assert!((x - y).abs() < 1e-8);
        }
        prop_assert!((a.raw_norm - b.raw_norm).abs() < 1e-8 * a.raw_norm.max(1.0));
        for ((m, n), o) in a.train_mean.iter().zip(&b.train_mean).zip(&offset) {
            prop_assert!((m + o - n).abs() < 1e-8);
        }
    }

    #[test]
    fn learned_directions_are_unit_and_left_positive((seed, _s, _o) in small_plant()) {
        let (set, _) = plant_synthetic(&PlantSpec::new(8, 1, 12, 2.0, 1.0, seed)).unwrap();
        let out = learn_all(&set, &Method::ALL, &LearnConfig::default());
        for v in out.registry.iter() {
            prop_assert!((polvec_core::numkit::norm(&v.direction) - 1.0).abs() < 1e-10);
            prop_assert!(sign_convention_holds(v, &set));
        }
    }

    #[test]
    fn direction_ignores_uniform_scaling((seed, scale, _o) in small_plant()) {
        let (set, _) = plant_synthetic(&PlantSpec::new(8, 1, 12, 2.0, 1.0, seed)).unwrap();
        let mut scaled = set.clone();
        scaled.records.iter_mut().for_each(|r| r.vector.iter_mut().for_each(|x| *x *= scale));
        let cfg = LearnConfig::default();
        for method in [Method::Caa, Method::Repe] {
            let a = learn_with(method, &set, Axis::Dim(Dimension::Soc), 1, &cfg).unwrap();
            let b = learn_with(method, &scaled, Axis::Dim(Dimension::Soc), 1, &cfg).unwrap();
            prop_assert!(cosine_similarity(&a.direction, &b.direction).unwrap() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn swapping_labels_negates_caa((seed, _s, _o) in small_plant()) {
        let (set, _) = plant_synthetic(&PlantSpec::new(8, 1, 12, 2.0, 1.0, seed)).unwrap();
        let mut swapped = set.clone();
        swapped.records.iter_mut().for_each(|r| r.label = r.label.flipped());
        let cfg = LearnConfig::default();
        let a = learn_with(Method::Caa, &set, Axis::Dim(Dimension::Dip), 1, &cfg).unwrap();
        let b = learn_with(Method::Caa, &swapped, Axis::Dim(Dimension::Dip), 1, &cfg).unwrap();
        prop_assert!(cosine_similarity(&a.direction, &b.direction).unwrap() < -1.0 + 1e-9);
    }
}
