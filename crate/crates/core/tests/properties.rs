use mam_core::io::{format_dataset, parse_dataset, KvConfig};
use mam_core::{
    build_precision, car_log_density, car_log_density_pairwise, gamma_weights, logistic_weight, misclassification,
    misclassification_unstructured, multiple_weights, nb_log_pmf, ConnectionMatrix, Dataset, SpatialConfig,
};
use proptest::prelude::*;

fn sorted_positions(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..100.0, 2..max_len).prop_map(|mut v| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    })
}

proptest! {
    #[test]
    fn multiple_weights_sum_to_one(pi in proptest::collection::vec(1e-9f64..1.0 - 1e-9, 1..=8)) {
        let u = ConnectionMatrix::new(pi.len()).unwrap();
        let w = multiple_weights(&pi, &u).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn nb_log_pmf_is_a_log_probability(y in 0u64..10_000, mu in 1e-3f64..1e4, phi in 1e-2f64..1e6) {
        let v = nb_log_pmf(y, mu, phi).unwrap();
        prop_assert!(v.is_finite() && v <= 1e-12);
    }

    #[test]
    fn car_forms_agree(
        pos in sorted_positions(25),
        radius in 0.5f64..120.0,
        scale in 0.1f64..10.0,
        seed in proptest::collection::vec(-4.0f64..4.0, 25),
    ) {
        let cfg = SpatialConfig { radius, scale, ..Default::default() };
        let prec = build_precision(gamma_weights(&pos, &cfg).unwrap()).unwrap();
        let x = &seed[..pos.len()];
        let a = car_log_density(x, &prec).unwrap();
        let b = car_log_density_pairwise(x, &prec).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn single_site_delta_matches_recomputation(
        pos in sorted_positions(20),
        x in proptest::collection::vec(-3.0f64..3.0, 20),
        j in 0usize..20,
        new in -3.0f64..3.0,
    ) {
        let prec = build_precision(gamma_weights(&pos, &SpatialConfig { radius: 30.0, ..Default::default() }).unwrap()).unwrap();
        let mut x = x[..pos.len()].to_vec();
        let j = j % pos.len();
        let before = car_log_density(&x, &prec).unwrap();
        let delta = prec.single_site_log_prior_delta(&x, j, new);
        x[j] = new;
        let after = car_log_density(&x, &prec).unwrap();
        prop_assert!((after - before - delta).abs() <= 1e-10);
    }

    #[test]
    fn logistic_weights_stay_inside_unit_interval(x in -1e6f64..1e6, eta in 1e-3f64..1e3) {
        let w = logistic_weight(x, eta);
        prop_assert!(w > 0.0 && w < 1.0);
        prop_assert!((w + logistic_weight(-x, eta) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn misclassification_ignores_primary_relabeling(
        truth in proptest::collection::vec(0usize..8, 1..60),
        noise in proptest::collection::vec(0usize..8, 60),
        flips in proptest::collection::vec(any::<bool>(), 60),
        perm_idx in 0usize..6,
    ) {
        let u = ConnectionMatrix::new(3).unwrap();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let est: Vec<usize> = truth.iter().enumerate().map(|(j, &t)| if flips[j] { noise[j] } else { t }).collect();
        let relabeled: Vec<usize> = est.iter().map(|&h| u.permute(h, &perms[perm_idx])).collect();
        let a = misclassification(&est, &truth, &u).unwrap();
        let b = misclassification(&relabeled, &truth, &u).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert_eq!(misclassification(&truth, &truth, &u).unwrap(), 0.0);
        prop_assert!(misclassification_unstructured(&est, &truth, 8).unwrap() <= a + 1e-12);
    }

    #[test]
    fn dataset_text_round_trips(
        rows in proptest::collection::vec(proptest::collection::vec(0u64..100_000, 3), 1..40),
        with_truth in any::<bool>(),
    ) {
        let p = rows.len();
        let pos: Vec<f64> = (0..p).map(|j| j as f64 * 1000.0 + 0.25).collect();
        let truth = with_truth.then(|| (0..p).map(|j| j % 4).collect());
        let ds = Dataset::new(rows, Some(pos), truth).unwrap();
        prop_assert_eq!(parse_dataset(&format_dataset(&ds)).unwrap(), ds);
    }

    #[test]
    fn config_values_round_trip(values in proptest::collection::btree_map("[a-z]{1,6}\\.[a-z_]{1,8}", "[A-Za-z0-9.,;-]{1,12}", 0..12)) {
        let text: String = values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let cfg = KvConfig::parse(&text).unwrap();
        prop_assert_eq!(cfg.echo(), values);
    }
}
