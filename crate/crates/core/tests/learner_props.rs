use choquet_dp::choquet::{choquet_integral, dual_choquet_integral};
use choquet_dp::learner::{
    choquet_density_gradient, collect_batch, detached_loss_and_gradient, dual_choquet_density_gradient,
    frozen_lambdas, parse_checkpoint, train, write_checkpoint_string, DensityModel, LossContext, TrainConfig,
    DENSITY_FLOOR,
};
use choquet_dp::measure::{solve_lambda, FuzzyMeasure};
use choquet_dp::random;
use choquet_dp::uncertainty::{counter_stream, LevelTable, UncertaintyLevels};
use choquet_dp::{Policy, TabularCmdp};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

const H: f64 = 1e-6;

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = numeric.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

fn central<F: Fn(&[f64]) -> f64>(x: &[f64], f: F) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[j] += H;
            down[j] -= H;
            (f(&up) - f(&down)) / (2.0 * H)
        })
        .collect()
}

fn distinct_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 2..=8).prop_filter("distinct", |v| {
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[1] - w[0] > 1e-3)
    })
}

fn probe() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    distinct_values().prop_flat_map(|v| {
        let k = v.len();
        (Just(v), prop::collection::vec(0.02f64..0.9, k))
    })
}

fn setup(seed: u64) -> (TabularCmdp, LevelTable) {
    let cmdp = random::cmdp(&mut counter_stream(seed, 1, 0), 6, 2, 0.9, 3);
    let levels = UncertaintyLevels::new(3, 0.7, 2, seed).unwrap();
    let table = LevelTable::from_index_line(&cmdp, &levels);
    (cmdp, table)
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn lower_gradient_matches_differences((values, g) in probe()) {
        let lambda = solve_lambda(&g).unwrap();
        let mut grad = vec![0.0; g.len()];
        let value = choquet_density_gradient(&values, &g, lambda, &mut grad);
        let m = FuzzyMeasure::new(g.clone()).unwrap();
        prop_assert!((value - choquet_integral(&values, &m).unwrap()).abs() <= 1e-9);
        let fd = central(&g, |x| choquet_density_gradient(&values, x, lambda, &mut vec![0.0; x.len()]));
        prop_assert!(relative_error(&grad, &fd) < 1e-4);
    }

    #[test]
    fn upper_gradient_matches_differences((values, g) in probe()) {
        let lambda = solve_lambda(&g).unwrap();
        let mut grad = vec![0.0; g.len()];
        let value = dual_choquet_density_gradient(&values, &g, lambda, &mut grad);
        let m = FuzzyMeasure::new(g.clone()).unwrap();
        prop_assert!((value - dual_choquet_integral(&values, &m).unwrap()).abs() <= 1e-9);
        let fd = central(&g, |x| dual_choquet_density_gradient(&values, x, lambda, &mut vec![0.0; x.len()]));
        prop_assert!(relative_error(&grad, &fd) < 1e-4);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn detached_loss_gradient_matches_differences(seed in any::<u64>(), network in any::<bool>()) {
        let (cmdp, table) = setup(seed);
        let mut model = if network {
            DensityModel::network(DensityModel::one_hot_features(6), 3, seed).unwrap()
        } else {
            let logits = random::values(&mut counter_stream(seed, 2, 0), 18, 1.0);
            DensityModel::from_logits(6, 3, logits).unwrap()
        };
        let policy = Policy::Deterministic((0..6).map(|s| s % 2).collect());
        let batch = collect_batch(&cmdp, &policy, 2, 10, seed, 0).unwrap();
        let v_r = random::values(&mut counter_stream(seed, 3, 0), 6, 3.0);
        let v_c = random::values(&mut counter_stream(seed, 4, 0), 6, 3.0);
        let ctx = LossContext { levels: &table, v_r: &v_r, v_c: &v_c, gamma: cmdp.gamma(), n_actions: 2 };
        let lambdas = frozen_lambdas(&model, &batch).unwrap();
        let (_, grad) = detached_loss_and_gradient(&model, &batch, &ctx, &lambdas).unwrap();
        let params = model.params().to_vec();
        let mut fd = vec![0.0; params.len()];
        for j in 0..params.len() {
            let mut eval = |x: f64| {
                model.params_mut()[j] = x;
                let loss = detached_loss_and_gradient(&model, &batch, &ctx, &lambdas).unwrap().0;
                model.params_mut()[j] = params[j];
                loss
            };
            fd[j] = (eval(params[j] + H) - eval(params[j] - H)) / (2.0 * H);
        }
        prop_assert!(relative_error(&grad, &fd) < 1e-4);
    }

    #[test]
    fn densities_respect_the_floor(logits in prop::collection::vec(-40.0f64..40.0, 12)) {
        let model = DensityModel::from_logits(3, 4, logits).unwrap();
        for s in 0..3 {
            prop_assert!(model.forward(s).iter().all(|g| (DENSITY_FLOOR..=1.0 - DENSITY_FLOOR).contains(g)));
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), network in any::<bool>()) {
        let model = if network {
            DensityModel::network(DensityModel::one_hot_features(4), 3, seed).unwrap()
        } else {
            DensityModel::from_logits(4, 3, random::values(&mut counter_stream(seed, 5, 0), 12, 2.0)).unwrap()
        };
        let parsed = parse_checkpoint(&write_checkpoint_string(&model)).unwrap();
        prop_assert_eq!(parsed, model);
    }
}

#[test]
fn constant_values_have_zero_gradient() {
    let mut grad = vec![1.0; 3];
    assert_eq!(choquet_density_gradient(&[2.0; 3], &[0.2, 0.3, 0.1], 1.5, &mut grad), 2.0);
    assert_eq!(grad, vec![0.0; 3]);
}

#[test]
fn infinite_budget_keeps_training_multiplier_at_zero() {
    let (cmdp, table) = setup(11);
    let cmdp = cmdp.with_budget(f64::INFINITY).unwrap();
    let mut model = DensityModel::tabular(6, 3);
    let config = TrainConfig { iters: 6, fuzzy_every: 2, ..TrainConfig::default() };
    let a = train(&cmdp, &table, &mut model, &config).unwrap();
    assert!(a.rows.iter().all(|r| r.multiplier == 0.0));
    let mut again = DensityModel::tabular(6, 3);
    assert_eq!(train(&cmdp, &table, &mut again, &config).unwrap(), a);
    assert_eq!(again, model);
}
