use choquet_dp::bellman::{value_iteration, Aggregation, BellmanOperator, Measures, Payoff, Policy};
use choquet_dp::exec::Execution;
use choquet_dp::random;
use choquet_dp::uncertainty::{counter_stream, LevelTable, UncertaintyLevels};
use choquet_dp::{FuzzyMeasure, TabularCmdp};
use proptest::prelude::*;
use rand::Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

struct Setup {
    cmdp: TabularCmdp,
    table: LevelTable,
    measures: Measures,
}

fn setup(seed: u64, n_states: usize, gamma: f64, k: usize) -> Setup {
    let mut rng = counter_stream(seed, 7, 0);
    let cmdp = random::cmdp(&mut rng, n_states, 3, gamma, 3);
    let levels = UncertaintyLevels::new(k, 0.5, 3, seed).unwrap();
    let table = LevelTable::from_index_line(&cmdp, &levels);
    let measures = Measures::PerState((0..n_states).map(|_| random::convex_measure(&mut rng, k)).collect());
    Setup { cmdp, table, measures }
}

const AGGREGATIONS: [Aggregation; 5] = [
    Aggregation::Nominal,
    Aggregation::Fuzzy,
    Aggregation::DualFuzzy,
    Aggregation::Worst,
    Aggregation::Best,
];

fn operator(s: &Setup, agg: Aggregation) -> BellmanOperator<'_> {
    BellmanOperator::with_aggregation(&s.cmdp, agg, Some(&s.table), Some(&s.measures)).unwrap()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn every_operator_contracts(seed in any::<u64>(), gamma in prop::sample::select(vec![0.5, 0.9, 0.99])) {
        let s = setup(seed, 12, gamma, 4);
        let mut rng = counter_stream(seed, 8, 0);
        for agg in AGGREGATIONS {
            for payoff in [Payoff::Reward, Payoff::Cost, Payoff::Lagrangian(0.7)] {
                let op = operator(&s, agg).payoff(payoff);
                let v1 = random::values(&mut rng, 12, 20.0);
                let v2 = random::values(&mut rng, 12, 20.0);
                let d = sup(&op.apply(&v1).unwrap(), &op.apply(&v2).unwrap());
                prop_assert!(d <= gamma * sup(&v1, &v2) + 1e-12, "{agg:?} {payoff:?}");
            }
        }
    }

    #[test]
    fn operators_are_monotone(seed in any::<u64>()) {
        let s = setup(seed, 10, 0.9, 5);
        let mut rng = counter_stream(seed, 9, 0);
        let v1 = random::values(&mut rng, 10, 5.0);
        let v2: Vec<f64> = v1.iter().map(|x| x + rng.random_range(0.0..2.0)).collect();
        for agg in AGGREGATIONS {
            let op = operator(&s, agg);
            let (t1, t2) = (op.apply(&v1).unwrap(), op.apply(&v2).unwrap());
            prop_assert!(t1.iter().zip(t2.iter()).all(|(a, b)| *a <= *b + 1e-12), "{agg:?}");
        }
    }

    #[test]
    fn aggregations_are_ordered(seed in any::<u64>()) {
        let s = setup(seed, 10, 0.9, 5);
        let v = random::values(&mut counter_stream(seed, 10, 0), 10, 5.0);
        let out: Vec<_> = [Aggregation::Worst, Aggregation::Fuzzy, Aggregation::DualFuzzy, Aggregation::Best]
            .into_iter()
            .map(|agg| operator(&s, agg).apply(&v).unwrap())
            .collect();
        for w in out.windows(2) {
            prop_assert!(w[0].iter().zip(w[1].iter()).all(|(a, b)| *a <= *b + 1e-12));
        }
    }

    #[test]
    fn execution_mode_does_not_change_bits(seed in any::<u64>()) {
        let s = setup(seed, 100, 0.95, 6);
        let v = random::values(&mut counter_stream(seed, 11, 0), 100, 5.0);
        for agg in AGGREGATIONS {
            let a = operator(&s, agg).execution(Execution::Sequential).apply(&v).unwrap();
            let b = operator(&s, agg).execution(Execution::Parallel).apply(&v).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn value_iteration_converges_geometrically(seed in any::<u64>(), gamma in 0.5f64..0.95) {
        let s = setup(seed, 15, gamma, 4);
        for agg in [Aggregation::Fuzzy, Aggregation::Nominal] {
            let op = operator(&s, agg);
            // Rounding moves each residual by about one ulp of V, so ratios
            // are only resolved to 1e-9 while residuals stay above ~1e-5.
            let (v, trace) = value_iteration(&op, None, 1e-4, 10_000).unwrap();
            prop_assert!(trace.converged);
            for w in trace.residuals.windows(2) {
                prop_assert!(w[1] / w[0] <= gamma + 1e-9);
            }
            prop_assert!(trace.log_residual_slope().unwrap() <= gamma.ln() + 0.01);
            let tv = op.apply(&v).unwrap();
            prop_assert!(sup(&tv, &v) <= gamma * 1e-4 + 1e-12);
        }
    }

    #[test]
    fn greedy_policy_attains_the_backup(seed in any::<u64>()) {
        let s = setup(seed, 8, 0.9, 3);
        let v = random::values(&mut counter_stream(seed, 12, 0), 8, 5.0);
        let op = operator(&s, Aggregation::Fuzzy);
        let greedy = op.greedy_policy(&v).unwrap();
        let fixed = operator(&s, Aggregation::Fuzzy).policy(&greedy).unwrap();
        prop_assert_eq!(op.apply(&v).unwrap(), fixed.apply(&v).unwrap());
    }
}

#[test]
fn additive_measure_with_one_level_matches_nominal() {
    let s = setup(3, 6, 0.9, 1);
    let levels = UncertaintyLevels::new(1, 0.0, 1, 0).unwrap();
    let table = LevelTable::from_index_line(&s.cmdp, &levels);
    let measures = Measures::Global(FuzzyMeasure::uniform(1));
    let fuzzy = BellmanOperator::fuzzy(&s.cmdp, &table, &measures).unwrap();
    let nominal = BellmanOperator::nominal(&s.cmdp);
    let v = random::values(&mut counter_stream(3, 0, 0), 6, 5.0);
    assert_eq!(fuzzy.apply(&v).unwrap(), nominal.apply(&v).unwrap());
}

#[test]
fn stochastic_policy_is_a_mixture() {
    let s = setup(4, 5, 0.9, 3);
    let v = random::values(&mut counter_stream(4, 0, 0), 5, 5.0);
    let a0 = Policy::Deterministic(vec![0; 5]);
    let a1 = Policy::Deterministic(vec![1; 5]);
    let mix = Policy::Stochastic(vec![vec![0.25, 0.75, 0.0]; 5]);
    let t = |p: &Policy| operator(&s, Aggregation::Fuzzy).policy(p).unwrap().apply(&v).unwrap();
    let (t0, t1, tm) = (t(&a0), t(&a1), t(&mix));
    for i in 0..5 {
        assert!((tm[i] - (0.25 * t0[i] + 0.75 * t1[i])).abs() < 1e-12);
    }
}
