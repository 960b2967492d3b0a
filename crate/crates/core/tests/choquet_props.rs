use choquet_dp::choquet::{choquet_integral, dual_choquet_integral};
use choquet_dp::measure::FuzzyMeasure;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Densities with `Σ g < 1`, so `λ ≥ 0`.
fn convex_measure(max_k: usize) -> impl Strategy<Value = FuzzyMeasure> {
    (prop::collection::vec(0.05f64..1.0, 1..=max_k), 0.1f64..0.98).prop_map(|(raw, scale)| {
        let total: f64 = raw.iter().sum();
        FuzzyMeasure::new(raw.iter().map(|x| (x / total * scale).max(1e-4)).collect()).unwrap()
    })
}

fn any_measure(max_k: usize) -> impl Strategy<Value = FuzzyMeasure> {
    prop::collection::vec(1e-4f64..(1.0 - 1e-4), 1..=max_k).prop_map(|g| FuzzyMeasure::new(g).unwrap())
}

fn with_values<S: Strategy<Value = FuzzyMeasure>>(m: S) -> impl Strategy<Value = (FuzzyMeasure, Vec<f64>)> {
    m.prop_flat_map(|m| {
        let k = m.k();
        (Just(m), prop::collection::vec(-10.0f64..10.0, k))
    })
}

fn expectations(m: &FuzzyMeasure, f: &[f64]) -> Vec<f64> {
    m.core_extreme_points().unwrap().iter().map(|p| p.expectation(f)).collect()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn lower_integral_is_min_over_core((m, f) in with_values(convex_measure(6))) {
        let lo = expectations(&m, &f).into_iter().fold(f64::INFINITY, f64::min);
        prop_assert!((choquet_integral(&f, &m).unwrap() - lo).abs() <= 1e-9);
    }

    #[test]
    fn upper_integral_is_max_over_core((m, f) in with_values(convex_measure(6))) {
        let hi = expectations(&m, &f).into_iter().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((dual_choquet_integral(&f, &m).unwrap() - hi).abs() <= 1e-9);
    }

    #[test]
    fn integrals_stay_within_the_range((m, f) in with_values(any_measure(10))) {
        let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in [choquet_integral(&f, &m).unwrap(), dual_choquet_integral(&f, &m).unwrap()] {
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn convex_lower_below_upper((m, f) in with_values(convex_measure(10))) {
        prop_assert!(choquet_integral(&f, &m).unwrap() <= dual_choquet_integral(&f, &m).unwrap() + 1e-9);
    }

    #[test]
    fn monotone_in_the_values((m, f) in with_values(any_measure(8)), bump in prop::collection::vec(0.0f64..3.0, 8)) {
        let g: Vec<f64> = f.iter().zip(&bump).map(|(a, b)| a + b).collect();
        prop_assert!(choquet_integral(&f, &m).unwrap() <= choquet_integral(&g, &m).unwrap() + 1e-9);
        prop_assert!(dual_choquet_integral(&f, &m).unwrap() <= dual_choquet_integral(&g, &m).unwrap() + 1e-9);
    }

    #[test]
    fn translation_and_scaling((m, f) in with_values(any_measure(8)), c in -5.0f64..5.0, a in 0.0f64..4.0) {
        let base = choquet_integral(&f, &m).unwrap();
        let shifted: Vec<f64> = f.iter().map(|x| a * x + c).collect();
        prop_assert!((choquet_integral(&shifted, &m).unwrap() - (a * base + c)).abs() <= 1e-9);
    }

    #[test]
    fn duality_by_negation((m, f) in with_values(any_measure(8))) {
        let neg: Vec<f64> = f.iter().map(|x| -x).collect();
        prop_assert!((dual_choquet_integral(&f, &m).unwrap() + choquet_integral(&neg, &m).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn constants_integrate_exactly(m in any_measure(12), c in -100.0f64..100.0) {
        let f = vec![c; m.k()];
        prop_assert_eq!(choquet_integral(&f, &m).unwrap(), c);
        prop_assert_eq!(dual_choquet_integral(&f, &m).unwrap(), c);
    }
}

#[test]
fn two_level_example() {
    let m = FuzzyMeasure::new(vec![0.3, 0.3]).unwrap();
    assert!((choquet_integral(&[1.0, 0.0], &m).unwrap() - 0.3).abs() < 1e-12);
    assert!((dual_choquet_integral(&[1.0, 0.0], &m).unwrap() - 0.7).abs() < 1e-12);
}

#[test]
fn length_mismatch_is_an_error() {
    let m = FuzzyMeasure::new(vec![0.3, 0.3]).unwrap();
    assert!(choquet_integral(&[1.0], &m).is_err());
}
