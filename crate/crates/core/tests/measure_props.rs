use choquet_dp::measure::{characteristic_residual, solve_lambda, FuzzyMeasure, MeasureError, SubsetMask};
use proptest::prelude::*;

fn density() -> impl Strategy<Value = f64> {
    1e-4..(1.0 - 1e-4)
}

fn densities(max_k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(density(), 1..=max_k)
}

/// Union of disjoint sets by the λ-rule: m(A ∪ B) = m(A) + m(B) + λ m(A) m(B).
fn sugeno(m: &FuzzyMeasure, a: f64, b: f64) -> f64 {
    a + b + m.lambda() * a * b
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn characteristic_equation_holds(g in densities(20)) {
        let lambda = solve_lambda(&g).unwrap();
        prop_assert!(lambda > -1.0);
        prop_assert!(characteristic_residual(&g, lambda) <= 1e-10);
    }

    #[test]
    fn lambda_sign_follows_density_sum(g in densities(12)) {
        let lambda = solve_lambda(&g).unwrap();
        let sum: f64 = g.iter().sum();
        if (sum - 1.0).abs() <= 1e-12 {
            prop_assert_eq!(lambda, 0.0);
        } else if g.len() > 1 && sum < 1.0 {
            prop_assert!(lambda > 0.0);
        } else if g.len() > 1 {
            prop_assert!(lambda < 0.0 && lambda > -1.0);
        }
    }

    #[test]
    fn two_level_closed_form(g1 in density(), g2 in density()) {
        let lambda = solve_lambda(&[g1, g2]).unwrap();
        let closed = (1.0 - g1 - g2) / (g1 * g2);
        prop_assert!((lambda - closed).abs() <= 1e-9 * closed.abs().max(1.0));
    }

    #[test]
    fn axioms_and_monotonicity(g in densities(8)) {
        let m = FuzzyMeasure::new(g.clone()).unwrap();
        let k = m.k();
        prop_assert_eq!(m.measure_of(SubsetMask::default()).unwrap(), 0.0);
        prop_assert!((m.measure_of(SubsetMask::full(k)).unwrap() - 1.0).abs() <= 1e-9);
        // With one level the singleton is the whole set.
        if k > 1 {
            for (i, gi) in g.iter().enumerate() {
                prop_assert_eq!(m.measure_of(SubsetMask::singleton(i)).unwrap(), *gi);
            }
        }
        let values: Vec<f64> = SubsetMask::all(k).map(|a| m.measure_of(a).unwrap()).collect();
        for a in SubsetMask::all(k) {
            prop_assert!((0.0..=1.0).contains(&values[a.bits() as usize]));
            for i in 0..k {
                if !a.contains(i) {
                    let b = a.union(SubsetMask::singleton(i));
                    prop_assert!(values[a.bits() as usize] <= values[b.bits() as usize] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn disjoint_unions_follow_the_lambda_rule(g in densities(7)) {
        let m = FuzzyMeasure::new(g).unwrap();
        let k = m.k();
        for a in SubsetMask::all(k) {
            for b in SubsetMask::all(k).filter(|b| b.is_disjoint(a)) {
                let (ma, mb) = (m.measure_of(a).unwrap(), m.measure_of(b).unwrap());
                let joint = m.measure_of(a.union(b)).unwrap();
                prop_assert!((joint - sugeno(&m, ma, mb)).abs() <= 1e-12, "λ = {}, gap {:e}", m.lambda(), (joint - sugeno(&m, ma, mb)).abs());
            }
        }
    }

    #[test]
    fn dual_is_a_monotone_capacity(g in densities(8)) {
        let m = FuzzyMeasure::new(g).unwrap();
        let k = m.k();
        prop_assert_eq!(m.dual_measure_of(SubsetMask::default()).unwrap(), 0.0);
        prop_assert!((m.dual_measure_of(SubsetMask::full(k)).unwrap() - 1.0).abs() <= 1e-9);
        for a in SubsetMask::all(k) {
            let d = m.dual_measure_of(a).unwrap();
            prop_assert!((d - (1.0 - m.measure_of(a.complement(k)).unwrap())).abs() <= 1e-15);
            for i in (0..k).filter(|&i| !a.contains(i)) {
                prop_assert!(d <= m.dual_measure_of(a.union(SubsetMask::singleton(i))).unwrap() + 1e-12);
            }
            // Convex measures sit below their duals.
            if m.lambda() >= 0.0 {
                prop_assert!(m.measure_of(a).unwrap() <= d + 1e-12);
            }
        }
    }

    #[test]
    fn core_points_dominate_the_measure(raw in densities(6), scale in 0.1f64..0.99) {
        let total: f64 = raw.iter().sum();
        let g: Vec<f64> = raw.iter().map(|x| (x / total * scale).max(1e-4)).collect();
        let m = FuzzyMeasure::new(g).unwrap();
        prop_assume!(m.lambda() >= 0.0);
        let core = m.core_extreme_points().unwrap();
        let factorial: usize = (1..=m.k()).product();
        prop_assert_eq!(core.len(), factorial);
        for p in core.iter() {
            prop_assert!(p.weights.iter().all(|w| *w >= 0.0));
            prop_assert!((p.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for a in SubsetMask::all(m.k()) {
                prop_assert!(p.probability_of(a) >= m.measure_of(a).unwrap() - 1e-12);
            }
        }
    }
}

#[test]
fn guards() {
    assert!(matches!(solve_lambda(&[0.5, 1.0]), Err(MeasureError::DensityOutOfRange { index: 1, .. })));
    assert!(matches!(solve_lambda(&[]), Err(MeasureError::Empty)));
    let m = FuzzyMeasure::new(vec![0.6, 0.6]).unwrap();
    assert!(matches!(m.core_extreme_points(), Err(MeasureError::NotConvex { .. })));
    let big = FuzzyMeasure::new(vec![0.05; 9]).unwrap();
    assert!(matches!(big.core_extreme_points(), Err(MeasureError::TooLarge { k: 9 })));
    assert!(matches!(
        m.measure_of(SubsetMask::singleton(2)),
        Err(MeasureError::InvalidSubset { .. })
    ));
}

#[test]
fn documented_examples() {
    assert_eq!(solve_lambda(&[0.5, 0.5]).unwrap(), 0.0);
    assert!((solve_lambda(&[0.3, 0.3]).unwrap() - 0.4 / 0.09).abs() < 1e-9);
    assert!((solve_lambda(&[0.6, 0.6]).unwrap() + 0.2 / 0.36).abs() < 1e-9);
    let m = FuzzyMeasure::new(vec![0.3, 0.3]).unwrap();
    assert!((m.measure_of(SubsetMask::full(2)).unwrap() - 1.0).abs() < 1e-12);
    assert!((m.dual_measure_of(SubsetMask::singleton(0)).unwrap() - 0.7).abs() < 1e-12);
    let core = m.core_extreme_points().unwrap();
    let pts: Vec<&[f64]> = core.iter().map(|p| p.weights.as_slice()).collect();
    assert!(pts.iter().any(|w| (w[0] - 0.3).abs() < 1e-12 && (w[1] - 0.7).abs() < 1e-12));
    assert!(pts.iter().any(|w| (w[0] - 0.7).abs() < 1e-12 && (w[1] - 0.3).abs() < 1e-12));
}
