//! Randomized property checks over the public surface. Tolerances here
//! are looser than the fixed-input suites where the generated magnitudes
//! admit genuine cancellation (affine shifts of near-equal logits).

use capsroute::{
    classify, normalize_rows, pearson, replicate_master, squash, write_dataset, read_dataset,
    BuilderConfig, CapsuleOutputs, CoefficientKind, CoefficientMatrix, LabeledDataset,
    MasterMatrix, MasterVariant, NormKind, PredictionTensor, Provenance, RoutingConfig,
};
use ndarray::{Array1, Array2};
use proptest::collection::vec;
use proptest::prelude::*;

fn config(norm_kind: NormKind, p: f64, q: f64) -> RoutingConfig {
    RoutingConfig {
        norm_kind,
        lower_bound: p,
        upper_bound: q,
        ..RoutingConfig::default()
    }
}

fn normalize_row(row: &[f64], cfg: &RoutingConfig) -> Vec<f64> {
    let matrix = CoefficientMatrix::new(
        Array2::from_shape_vec((1, row.len()), row.to_vec()).unwrap(),
        CoefficientKind::RawLogits,
    )
    .unwrap();
    normalize_rows(&matrix, cfg).unwrap().values().row(0).to_vec()
}

fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
    vec(-100.0..100.0f64, 2..16)
}

fn bounds_strategy() -> impl Strategy<Value = (f64, f64)> {
    (0.0..0.45f64, 0.55..1.0f64)
}

proptest! {
    #[test]
    fn maxmin_bounds_and_exact_endpoints(row in row_strategy(), (p, q) in bounds_strategy()) {
        let cfg = config(NormKind::MaxMin, p, q);
        let c = normalize_row(&row, &cfg);
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max - min <= cfg.epsilon {
            for &v in &c {
                prop_assert_eq!(v, 0.5 * (p + q));
            }
        } else {
            for (&b, &v) in row.iter().zip(&c) {
                prop_assert!((p..=q).contains(&v), "{v} outside [{p}, {q}]");
                if b == min {
                    prop_assert_eq!(v, p);
                }
                if b == max {
                    prop_assert_eq!(v, q);
                }
            }
        }
    }

    #[test]
    fn maxmin_affine_invariance(
        row in vec(-10.0..10.0f64, 2..12),
        (p, q) in bounds_strategy(),
        alpha in 0.5..4.0f64,
        beta in -8.0..8.0f64,
    ) {
        let cfg = config(NormKind::MaxMin, p, q);
        let c = normalize_row(&row, &cfg);
        let shifted: Vec<f64> = row.iter().map(|&v| alpha * v + beta).collect();
        let c2 = normalize_row(&shifted, &cfg);
        // 1e-10 rather than 1e-12: the shift can cancel most of the
        // mantissa of near-equal entries before the row range divides it
        // back out.
        for (a, b) in c.iter().zip(&c2) {
            prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rows_are_distributions(row in row_strategy()) {
        let cfg = config(NormKind::Softmax, 0.0, 1.0);
        let c = normalize_row(&row, &cfg);
        let sum: f64 = c.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
        for &v in &c {
            prop_assert!(v > 0.0 && v <= 1.0, "{v}");
        }
    }

    #[test]
    fn softmax_constant_rows_are_uniform(value in -50.0..50.0f64, len in 2usize..12) {
        let cfg = config(NormKind::Softmax, 0.0, 1.0);
        let c = normalize_row(&vec![value; len], &cfg);
        for &v in &c {
            prop_assert_eq!(v, 1.0 / len as f64);
        }
    }

    #[test]
    fn squash_contracts(s in vec(-5.0..5.0f64, 1..20), k in 1.5..4.0f64) {
        let arr = Array1::from_vec(s);
        let v = squash(&arr, 1e-12);
        let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(v_norm < 1.0, "norm {v_norm}");
        let s_norm = arr.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s_norm > 1e-6 {
            let dot: f64 = v.iter().zip(&arr).map(|(a, b)| a * b).sum();
            prop_assert!(dot >= 0.0);
            prop_assert!((dot / (v_norm * s_norm) - 1.0).abs() <= 1e-12);
            let scaled = squash(&arr.mapv(|x| x * k), 1e-12);
            let scaled_norm = scaled.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(scaled_norm > v_norm);
        }
    }

    #[test]
    fn pearson_is_symmetric_bounded_and_affine(
        pairs in vec((-10.0..10.0f64, -10.0..10.0f64), 3..24),
        alpha in 0.1..5.0f64,
        beta in -20.0..20.0f64,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let r = pearson(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r), "{r}");
        prop_assert_eq!(r, pearson(&y, &x).unwrap());
        let x2: Vec<f64> = x.iter().map(|&v| alpha * v + beta).collect();
        let r2 = pearson(&x2, &y).unwrap();
        // Zero-variance inputs round-trip through the 0 convention; skip
        // the affine comparison when either side degenerates.
        if r != 0.0 && r2 != 0.0 {
            prop_assert!((r - r2).abs() <= 1e-9, "{r} vs {r2}");
        }
    }

    #[test]
    fn classify_picks_earliest_maximal_row(values in vec(0.0..1.0f64, 4..40)) {
        let dim = 2;
        let n = values.len() / dim;
        let outputs = CapsuleOutputs::new(
            Array2::from_shape_vec((n, dim), values[..n * dim].to_vec()).unwrap(),
        )
        .unwrap();
        let winner = classify(&outputs);
        let norms = outputs.norms();
        for (i, &norm) in norms.iter().enumerate() {
            prop_assert!(norm <= norms[winner]);
            if i < winner {
                prop_assert!(norm < norms[winner], "earlier row {i} ties or beats winner");
            }
        }
    }

    #[test]
    fn replicate_master_repeats_exactly(
        values in vec(0.0..1.0f64, 4..32),
        batch in 1usize..5,
    ) {
        let cols = 2;
        let rows = values.len() / cols;
        let master = MasterMatrix::new(
            Array2::from_shape_vec((rows, cols), values[..rows * cols].to_vec()).unwrap(),
            BuilderConfig::default(),
            RoutingConfig::default(),
            vec![],
            String::new(),
            MasterVariant::Full,
        )
        .unwrap();
        let stack = replicate_master(&master, batch).unwrap();
        prop_assert_eq!(stack.shape(), &[batch, rows, cols]);
        for b in 0..batch {
            for i in 0..rows {
                for j in 0..cols {
                    prop_assert_eq!(
                        stack[[b, i, j]].to_bits(),
                        master.values()[[i, j]].to_bits()
                    );
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_files_round_trip_bitwise(
        n_lower in 1usize..4,
        n_upper in 1usize..4,
        dim in 1usize..4,
        count in 0usize..5,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let examples: Vec<PredictionTensor> = (0..count)
            .map(|_| {
                let values: Vec<f64> = (0..n_lower * n_upper * dim)
                    .map(|_| rng.gen_range(-1e3..1e3))
                    .collect();
                PredictionTensor::from_shape_vec((n_lower, n_upper, dim), values).unwrap()
            })
            .collect();
        let labels: Vec<usize> = (0..count).map(|_| rng.gen_range(0..n_upper)).collect();
        let dataset = LabeledDataset::with_dims(
            (n_lower, n_upper, dim),
            examples,
            labels,
            Provenance::External { description: "prop".into() },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_dataset(&path, &dataset).unwrap();
        let back = read_dataset(&path).unwrap();
        prop_assert_eq!(&back, &dataset);
        let bits = |d: &LabeledDataset| d
            .examples()
            .iter()
            .flat_map(|e| e.values().iter().map(|v| v.to_bits()))
            .collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&dataset));
    }
}
