use cfmi_core::cfm::cfmi_loss;
use cfmi_core::data::{ampute_mar, ampute_mcar};
use cfmi_core::field::FieldConfig;
use cfmi_core::metrics::{crps_sample, evaluate, MetricConfig};
use cfmi_core::split::{split_random, split_random_historical};
use cfmi_core::{
    impute_dataset, EulerSampler, FieldNetwork, IncompleteDataset, Matrix, SplitMasks, Tensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mask_strategy() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (1usize..12).prop_flat_map(|d| {
        (
            prop::collection::vec(any::<bool>(), d)
                .prop_filter("one observed", |m| m.iter().any(|&b| b)),
            prop::collection::vec(any::<bool>(), d),
        )
    })
}

fn complete_matrix() -> impl Strategy<Value = Matrix> {
    (4usize..30, 2usize..6).prop_flat_map(|(n, d)| {
        prop::collection::vec(-50.0f64..50.0, n * d)
            .prop_map(move |v| Matrix::new(n, d, v).unwrap())
    })
}

proptest! {
    #[test]
    fn splits_respect_the_mask((mask, partner) in mask_strategy(), seed in any::<u64>(), mix in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = split_random(&mask, &mut rng).unwrap();
        prop_assert!(a.is_valid_for(&mask));
        let b = split_random_historical(&mask, &partner, mix, &mut rng).unwrap();
        prop_assert!(b.is_valid_for(&mask));
    }

    #[test]
    fn amputation_keeps_observed_values(m in complete_matrix(), rate in 0.05f64..0.9, seed in any::<u64>()) {
        // Constant columns cannot be standardised; skip those draws.
        let distinct = (0..m.cols()).all(|j| {
            let c = m.column(j);
            c.iter().any(|&v| v != c[0])
        });
        prop_assume!(distinct);
        for (ds, truth) in [ampute_mcar(&m, rate, seed), ampute_mar(&m, rate, seed)]
            .into_iter()
            .filter_map(|r| r.ok())
        {
            prop_assert!(truth.is_consistent(&ds));
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    if ds.mask().is_observed(i, j) {
                        prop_assert_eq!(ds.data().get(i, j), m.get(i, j));
                    } else {
                        prop_assert!(ds.data().get(i, j).is_nan());
                    }
                }
            }
            let back = ds.unstandardize(&ds.standardized());
            for (a, b) in back.data().iter().zip(ds.data().data()) {
                prop_assert!((a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn loss_ignores_non_target_outputs(
        vals in prop::collection::vec(-5.0f64..5.0, 12),
        noise in prop::collection::vec(-100.0f64..100.0, 12),
        targ in prop::collection::vec(any::<bool>(), 12),
    ) {
        let (b, d) = (3, 4);
        let mut splits = Vec::new();
        for i in 0..b {
            let mut t = targ[i * d..(i + 1) * d].to_vec();
            if !t.iter().any(|&x| x) {
                t[0] = true;
            }
            let cond = t.iter().map(|&x| !x).collect();
            splits.push(SplitMasks { target: t, cond });
        }
        let target = Tensor::matrix(b, d, vec![0.0; b * d]).unwrap();
        let pred = Tensor::matrix(b, d, vals.clone()).unwrap();
        let mut moved = vals.clone();
        for i in 0..b {
            for j in 0..d {
                if !splits[i].target[j] {
                    moved[i * d + j] += noise[i * d + j];
                }
            }
        }
        let l1 = cfmi_loss(&pred, &target, &splits).unwrap();
        let l2 = cfmi_loss(&Tensor::matrix(b, d, moved).unwrap(), &target, &splits).unwrap();
        prop_assert!(l1 >= 0.0);
        prop_assert_eq!(l1, l2);
        // Scaling all residuals by c scales the loss by c^2.
        let scaled = Tensor::matrix(b, d, vals.iter().map(|v| 3.0 * v).collect()).unwrap();
        let l3 = cfmi_loss(&scaled, &target, &splits).unwrap();
        prop_assert!((l3 - 9.0 * l1).abs() <= 1e-9 * l3.max(1.0));
    }

    #[test]
    fn crps_matches_double_sum(xs in prop::collection::vec(-10.0f64..10.0, 1..20), y in -10.0f64..10.0) {
        let k = xs.len() as f64;
        let first = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / k;
        let second = xs.iter().flat_map(|a| xs.iter().map(move |b| (a - b).abs())).sum::<f64>() / (2.0 * k * k);
        let mut s = xs.clone();
        let got = crps_sample(&mut s, y);
        prop_assert!(got >= -1e-12);
        prop_assert!((got - (first - second)).abs() < 1e-9);
    }
}

fn tiny_net(dim: usize) -> FieldNetwork {
    let cfg = FieldConfig {
        dim,
        hidden: 8,
        blocks: 1,
        time_dim: 4,
    };
    FieldNetwork::new(cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn imputation_preserves_observed_and_metrics_are_nonnegative(
        m in complete_matrix(),
        rate in 0.1f64..0.6,
        seed in any::<u64>(),
    ) {
        let distinct = (0..m.cols()).all(|j| {
            let c = m.column(j);
            c.iter().any(|&v| v != c[0])
        });
        prop_assume!(distinct);
        let Ok((ds, truth)) = ampute_mcar(&m, rate, seed) else { return Ok(()); };
        prop_assume!(ds.mask().missing_count() > 0);
        let ds: IncompleteDataset = ds;
        let net = tiny_net(ds.cols());
        let set = impute_dataset(&EulerSampler::new(&net, 4).unwrap(), &ds, 3, seed).unwrap();
        let base = ds.standardized();
        for c in &set.copies {
            for i in 0..ds.rows() {
                for j in 0..ds.cols() {
                    if ds.mask().is_observed(i, j) {
                        prop_assert_eq!(c.get(i, j), base.get(i, j));
                    } else {
                        prop_assert!(c.get(i, j).is_finite());
                    }
                }
            }
        }
        let report = evaluate(&set.copies, &ds.standardize(&truth.complete), ds.mask(), &MetricConfig::default()).unwrap();
        for v in report.values().into_iter().flatten() {
            prop_assert!(v >= 0.0 && v.is_finite());
        }
    }
}
