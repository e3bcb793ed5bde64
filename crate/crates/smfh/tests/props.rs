//! Property tests for the structural invariants.

mod support;

use ndarray::Array2;
use proptest::prelude::*;

use smfh::data::FeatureMatrix;
use smfh::factorization::{normalize_codes, update_basis, BasisMatrix, CodeMatrix};
use smfh::graph::{graph_quadratic, label_affinity, laplacian};
use smfh::hashing::BinaryCodes;
use smfh::regression::ProjectionMatrix;

use support::pairwise_graph_sum;

fn nonneg_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(0.0f64..10.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn binary_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<u8>> {
    proptest::collection::vec(0u8..2, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_update_preserves_non_negativity(
        x in nonneg_matrix(5, 8),
        y in nonneg_matrix(3, 8),
        u in nonneg_matrix(5, 3),
    ) {
        let x = FeatureMatrix::new(x).unwrap();
        let y = CodeMatrix::new(y).unwrap();
        let u = BasisMatrix::new(u).unwrap();
        let out = update_basis(&x, &y, &u, 1e-12).unwrap();
        prop_assert!(out.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn normalize_is_idempotent_and_bounded(y in nonneg_matrix(4, 6)) {
        let once = normalize_codes(CodeMatrix::new(y).unwrap());
        prop_assert!(once.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let twice = normalize_codes(once.clone());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn graph_quadratic_is_non_negative_and_matches_pairwise(
        labels in binary_matrix(3, 7),
        y in nonneg_matrix(2, 7),
    ) {
        let affinity = label_affinity(&labels);
        let bundle = laplacian(affinity.clone()).unwrap();
        let quad = graph_quadratic(&y, bundle.laplacian()).unwrap();
        prop_assert!(quad >= -1e-9);
        let pairwise = pairwise_graph_sum(&y, &affinity);
        let scale = pairwise.abs().max(1.0);
        prop_assert!((quad - pairwise).abs() <= 1e-9 * scale);
    }

    #[test]
    fn affinity_is_exact_integer_gram(labels in binary_matrix(4, 6)) {
        let a = label_affinity(&labels);
        for i in 0..6 {
            for j in 0..6 {
                let mut count = 0u32;
                for d in 0..4 {
                    count += (labels[(d, i)] & labels[(d, j)]) as u32;
                }
                prop_assert_eq!(a[(i, j)], count as f64);
            }
        }
    }

    #[test]
    fn pack_unpack_roundtrip(
        bits in 1usize..=512,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 3;
        let raw: Vec<Vec<bool>> = (0..n)
            .map(|_| (0..bits).map(|_| rng.random::<bool>()).collect())
            .collect();
        let packed = BinaryCodes::from_fn(n, bits, |i, b| raw[i][b]).unwrap();
        for (i, row) in raw.iter().enumerate() {
            for (b, &bit) in row.iter().enumerate() {
                prop_assert_eq!(packed.bit(i, b), bit);
            }
        }
    }

    #[test]
    fn encode_is_scale_invariant(
        w in proptest::collection::vec(-5.0f64..5.0, 4 * 6),
        x in nonneg_matrix(4, 5),
        scale in 0.001f64..1000.0,
    ) {
        let w = ProjectionMatrix::new(Array2::from_shape_vec((4, 6), w).unwrap()).unwrap();
        let scaled = FeatureMatrix::new(&x * scale).unwrap();
        let x = FeatureMatrix::new(x).unwrap();
        let a = smfh::hashing::encode(&w, &x).unwrap();
        let b = smfh::hashing::encode(&w, &scaled).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rank_distances_never_decrease(
        seed in any::<u64>(),
        k in 1usize..30,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let db_bits: Vec<Vec<bool>> = (0..30)
            .map(|_| (0..16).map(|_| rng.random::<bool>()).collect())
            .collect();
        let q_bits: Vec<bool> = (0..16).map(|_| rng.random::<bool>()).collect();
        let db = BinaryCodes::from_fn(30, 16, |i, b| db_bits[i][b]).unwrap();
        let q = BinaryCodes::from_fn(1, 16, |_, b| q_bits[b]).unwrap();
        let hits = smfh::hashing::rank(q.code(0), 16, &db, k).unwrap();
        prop_assert_eq!(hits.len(), k);
        for pair in hits.windows(2) {
            prop_assert!(pair[0].1 <= pair[1].1);
            if pair[0].1 == pair[1].1 {
                prop_assert!(pair[0].0 < pair[1].0);
            }
        }
    }
}
