mod common;

use common::checks;
use common::*;
use proptest::prelude::*;
use spectrum_dc::eval::{self, DissimilarityMatrix};
use spectrum_dc::pca::{evr, pca_fit};
use spectrum_dc::FeatureMatrix;

#[test]
fn pca_matches_covariance_eigendecomposition() {
    let c = checks::pca_oracle(11);
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn kmeans_properties() {
    let c = checks::kmeans_properties(3);
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn ivat_matches_exhaustive_minimax() {
    let c = checks::ivat_oracle(5);
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn silhouette_matches_definition() {
    let c = checks::silhouette_oracle(7);
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn segmentation_counts() {
    let c = checks::segmentation_arithmetic(13);
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn jacobi_oracle_on_a_known_matrix() {
    // eigenvalues of [[2,1],[1,2]] are 3 and 1
    let (vals, vecs) = jacobi_eigen(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
    assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
    assert!((vecs[0][0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn brute_force_oracles_on_known_cases() {
    let pts: Vec<Vec<f64>> = [0.0, 1.0, 10.0, 11.0].iter().map(|&v| vec![v]).collect();
    assert!((brute_silhouette(&pts, &[0, 0, 1, 1]) - 0.8997493734335839).abs() < 1e-12);
    assert_eq!(brute_kmeans_inertia(&pts, 2), 1.0);
    let d = vec![vec![0.0, 5.0, 1.0], vec![5.0, 0.0, 2.0], vec![1.0, 2.0, 0.0]];
    assert_eq!(minimax_all_paths(&d, 0, 1), 2.0);
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..20, 1usize..6).prop_flat_map(|(rows, dim)| {
        proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, dim), rows)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evr_matches_oracle_and_sums_to_one(x in rows_strategy()) {
        let n = x.len().min(x[0].len());
        let model = pca_fit(&FeatureMatrix::from_rows(&x).unwrap(), n).unwrap();
        let (values, _) = jacobi_eigen(&covariance(&x));
        let trace: f64 = values.iter().sum();
        prop_assume!(trace > 1e-9);
        let ratios = evr(&model).unwrap();
        for (r, v) in ratios.iter().zip(&values) {
            prop_assert!((r - v.max(0.0) / trace).abs() < 1e-8);
        }
        if x.len() > x[0].len() {
            prop_assert!((ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn silhouette_equals_brute_force(
        pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 3..40),
        seed in any::<u64>(),
    ) {
        use rand::Rng as _;
        let mut r = rng(seed);
        let mut labels: Vec<u32> = (0..pts.len()).map(|_| r.random_range(0..4)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let d = DissimilarityMatrix::from_features(&FeatureMatrix::from_rows(&pts).unwrap());
        let got = eval::silhouette(&d, &labels).unwrap();
        prop_assert!((got - brute_silhouette(&pts, &labels)).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&got));
    }

    #[test]
    fn ivat_equals_minimax(n in 1usize..7, values in proptest::collection::vec(0u8..6, 21)) {
        let mut d = vec![vec![0.0; n]; n];
        let mut it = values.iter();
        for i in 0..n {
            for j in i + 1..n {
                let v = f64::from(*it.next().unwrap());
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        let v = eval::vat(&DissimilarityMatrix::new(n, d.concat()).unwrap(), true).unwrap();
        let ivat = v.ivat.unwrap();
        for a in 0..n {
            for b in 0..n {
                prop_assert_eq!(ivat.get(a, b), minimax_all_paths(&d, v.permutation[a], v.permutation[b]));
            }
        }
    }
}
