use approx::assert_abs_diff_eq;
use chimp_core::ichimp::{forward, materialize, ChimpParams};
use chimp_core::integral::{chi_maxmin, chi_mobius, chi_sort};
use chimp_core::training::{grad_check, sgd_fit, TrainConfig};
use chimp_core::xai::{interaction, operator_distances, shapley};
use chimp_core::{FuzzyMeasure32, FuzzyMeasure64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(n: usize) -> impl Strategy<Value = ChimpParams<f64>> {
    prop::collection::vec(-0.5f64..1.0, 1 << n).prop_map(move |mut raw| {
        raw[0] = 0.0;
        ChimpParams::from_raw(n, raw).unwrap()
    })
}

fn case() -> impl Strategy<Value = (ChimpParams<f64>, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|n| (params(n), prop::collection::vec(-1.0f64..1.0, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn materialized_measures_are_monotone((p, _) in case()) {
        prop_assert!(materialize(&p).g.validate().is_valid());
    }

    #[test]
    fn network_output_is_the_integral((p, h) in case()) {
        let g = materialize(&p).g;
        let (y, _) = forward(&p, &h).unwrap();
        assert_abs_diff_eq!(y, chi_sort(&g, &h).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(y, chi_mobius(&g.mobius(), &h).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn integral_is_bounded_by_extremes((p, h) in case()) {
        let g = materialize(&p).g.normalized();
        prop_assume!(g.is_some());
        let y = chi_maxmin(&g.unwrap(), &h).unwrap();
        let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
    }

    #[test]
    fn integral_is_positively_homogeneous((p, h) in case(), c in 0.0f64..5.0) {
        let g = materialize(&p).g;
        let scaled: Vec<f64> = h.iter().map(|v| v * c).collect();
        assert_abs_diff_eq!(
            chi_sort(&g, &scaled).unwrap(),
            c * chi_sort(&g, &h).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn zeta_inverts_mobius((p, _) in case()) {
        let g = materialize(&p).g;
        let back = g.mobius().zeta().measure;
        for (a, b) in g.values().iter().zip(back.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn shapley_is_efficient_and_nonnegative((p, _) in case()) {
        let g = materialize(&p).g;
        let s = shapley(&g).unwrap();
        assert_abs_diff_eq!(s.iter().sum::<f64>(), g.total(), epsilon = 1e-12);
        prop_assert!(s.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn interaction_is_symmetric((p, _) in case()) {
        prop_assume!(p.n() >= 2);
        let m = interaction(&materialize(&p).g).unwrap();
        for (i, row) in m.iter().enumerate() {
            prop_assert!(row[i].is_none());
            for (j, v) in row.iter().enumerate() {
                if let (Some(a), Some(b)) = (v, m[j][i]) {
                    assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn distances_are_nonnegative((p, _) in case()) {
        prop_assume!(p.n() >= 2);
        if let Some(g) = materialize(&p).g.normalized() {
            let d = operator_distances(&g).unwrap();
            prop_assert!(d.max >= 0.0 && d.min >= 0.0 && d.mean >= 0.0 && d.los >= 0.0);
            prop_assert!(d.los <= d.mean + 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences(
        (p, h) in (2usize..=5).prop_flat_map(|n| (params(n), prop::collection::vec(0.0f64..1.0, n))),
        label in 0.0f64..1.0,
    ) {
        let report = grad_check(&p, &h, label, 1e-6).unwrap();
        prop_assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}

#[test]
fn single_precision_matches_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p64 = ChimpParams::<f64>::random(4, 0.0, 1.0, &mut rng).unwrap();
    let raw32: Vec<f32> = p64.raw().iter().map(|&v| v as f32).collect();
    let p32 = ChimpParams::<f32>::from_raw(4, raw32).unwrap();
    let g64: FuzzyMeasure64 = materialize(&p64).g;
    let g32: FuzzyMeasure32 = materialize(&p32).g;
    assert!(g32.validate().is_valid());
    let h = [0.3, 0.9, 0.1, 0.55];
    let h32 = h.map(|v| v as f32);
    let y64 = chi_sort(&g64, &h).unwrap();
    let y32 = chi_sort(&g32, &h32).unwrap();
    assert_abs_diff_eq!(y64, y32 as f64, epsilon = 1e-5);
}

#[test]
fn fitting_is_deterministic_per_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = ChimpParams::<f64>::random(3, 0.0, 0.5, &mut rng).unwrap();
    let g = materialize(&p).g;
    let rows: Vec<Vec<f64>> = (0..40).map(|k| vec![(k % 7) as f64 / 7.0, (k % 5) as f64 / 5.0, (k % 3) as f64 / 3.0]).collect();
    let labels: Vec<f64> = rows.iter().map(|h| chi_sort(&g, h).unwrap()).collect();
    let cfg = TrainConfig { epochs: 30, seed: 11, ..TrainConfig::default() };
    let a = sgd_fit(&rows, &labels, &cfg).unwrap();
    let b = sgd_fit(&rows, &labels, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.history.len(), 31);
    let c = sgd_fit(&rows, &labels, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}
