// SPDX-License-Identifier: MIT OR Apache-2.0

use polvec_core::numkit::{self, cosine_similarity, fit_logistic, principal_component, sigmoid, Matrix};
use polvec_core::Error;
use polvec_oracles as oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn pca_matches_jacobi_on_random_matrices() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, 12, 6);
        let got = principal_component(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let want = oracle::top_principal_axis(&rows);
        let c = cosine_similarity(&got, &want).unwrap().abs();
        assert!(c >= 0.999, "seed {seed}: |cos| = {c}");
    }
}

#[test]
fn pca_matches_jacobi_on_anisotropic_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let scales = [5.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.01];
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| scales.iter().map(|s| s * rng.random_range(-1.0..1.0)).collect())
        .collect();
    let got = principal_component(&Matrix::from_rows(&rows).unwrap()).unwrap();
    let want = oracle::top_principal_axis(&rows);
    assert!(cosine_similarity(&got, &want).unwrap().abs() > 0.9999);
}

fn overlapping_2d(seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..20 {
        let label = i % 2 == 0;
        let shift = if label { 0.6 } else { -0.4 };
        x.push(vec![shift + rng.random_range(-1.0..1.0), 0.5 * shift + rng.random_range(-1.0..1.0)]);
        y.push(label);
    }
    (x, y)
}

#[test]
fn logistic_beats_grid_oracle() {
    let (x, y) = overlapping_2d(7);
    let lambda = 0.1;
    let m = fit_logistic(&Matrix::from_rows(&x).unwrap(), &y, lambda).unwrap();
    assert!(m.converged);
    let fitted = oracle::logreg_objective(&x, &y, &m.weights, m.intercept, lambda);
    let (_, _, _, grid_best) = oracle::logreg_grid_2d(&x, &y, lambda, -5.0, 5.0, 101);
    assert!(fitted <= grid_best + 1e-12, "fitted {fitted} vs grid {grid_best}");
}

#[test]
fn logistic_objective_agrees_with_oracle_formula() {
    let (x, y) = overlapping_2d(3);
    let m = Matrix::from_rows(&x).unwrap();
    for (w, b) in [([0.0, 0.0], 0.0), ([1.5, -2.0], 0.3), ([-4.0, 4.0], -1.0)] {
        let a = numkit::logistic_objective(&m, &y, &w, b, 0.25);
        let o = oracle::logreg_objective(&x, &y, &w, b, 0.25);
        assert!((a - o).abs() < 1e-12);
    }
}

#[test]
fn separable_fixture_is_fit_exactly() {
    let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0 - 1.45, ((i * 7) % 5) as f64 / 5.0]).collect();
    let y: Vec<bool> = (0..30).map(|i| i >= 15).collect();
    let m = fit_logistic(&Matrix::from_rows(&x).unwrap(), &y, 0.01).unwrap();
    let preds: Vec<bool> = x.iter().map(|r| m.predict(r)).collect();
    assert_eq!(preds, y);
    assert!(m.weights[0] > 0.0);
}

#[test]
fn lambda_ladder_shrinks_weights() {
    let (x, y) = overlapping_2d(11);
    let m = Matrix::from_rows(&x).unwrap();
    let mut prev = f64::INFINITY;
    for lambda in [0.0, 0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1e6] {
        let fit = fit_logistic(&m, &y, lambda).unwrap();
        let n = numkit::norm(&fit.weights);
        assert!(n <= prev + 1e-9, "lambda {lambda}: {n} > {prev}");
        prev = n;
    }
    assert!(prev <= 1e-3);
}

#[test]
fn rank_deficient_and_single_class_are_typed() {
    let flat = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
    assert!(matches!(principal_component(&flat), Err(Error::RankDeficient)));
    let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
    assert!(matches!(fit_logistic(&x, &[true, true], 1.0), Err(Error::SingleClass)));
    assert!(matches!(fit_logistic(&x, &[true], 1.0), Err(Error::DimensionMismatch { .. })));
}

fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (3usize..10, 2usize..6).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n))
}

fn variance_along(rows: &[Vec<f64>], dir: &[f64]) -> f64 {
    let proj: Vec<f64> = rows.iter().map(|r| numkit::dot(r, dir)).collect();
    let mean = proj.iter().sum::<f64>() / proj.len() as f64;
    proj.iter().map(|p| (p - mean).powi(2)).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn principal_component_is_unit_and_maximal(rows in matrix_strategy(), seed in any::<u64>()) {
        let m = Matrix::from_rows(&rows).unwrap();
        match principal_component(&m) {
            Ok(v) => {
                prop_assert!((numkit::norm(&v) - 1.0).abs() < 1e-10);
                let best = variance_along(&rows, &v);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..100 {
                    let r: Vec<f64> = (0..v.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                    if let Ok((u, _)) = numkit::normalize(&r) {
                        prop_assert!(variance_along(&rows, &u) <= best * (1.0 + 1e-6) + 1e-9);
                    }
                }
            }
            Err(Error::RankDeficient) => {}
            Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
        }
    }

    #[test]
    fn sigmoid_stays_in_unit_interval(z in -1e6f64..1e6) {
        let s = sigmoid(z);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((sigmoid(-z) - (1.0 - s)).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_bounded_and_symmetric(
        a in prop::collection::vec(-100.0f64..100.0, 4),
        b in prop::collection::vec(-100.0f64..100.0, 4),
    ) {
        if let (Ok(ab), Ok(ba)) = (cosine_similarity(&a, &b), cosine_similarity(&b, &a)) {
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, ba);
        }
    }

    #[test]
    fn huge_lambda_kills_weights(rows in matrix_strategy()) {
        let y: Vec<bool> = (0..rows.len()).map(|i| i % 2 == 0).collect();
        let fit = fit_logistic(&Matrix::from_rows(&rows).unwrap(), &y, 1e6).unwrap();
        prop_assert!(numkit::norm(&fit.weights) <= 1e-3);
    }
}
