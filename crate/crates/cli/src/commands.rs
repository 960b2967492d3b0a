//! One function per subcommand. Each writes its outputs under
//! `config.out_dir` and returns the process exit code on success.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use choquet_dp::bellman::{value_iteration, BellmanOperator, Measures, Payoff};
use choquet_dp::cmdp::{build_double_integrator, load_cmdp, CmdpParts, DoubleIntegratorConfig, TabularCmdp};
use choquet_dp::lagrangian::{equivalence_check, load_instance, EquivalenceReport, LagrangianError};
use choquet_dp::learner::{save_checkpoint, train, DensityModel, TrainConfig};
use choquet_dp::measure::{FuzzyMeasure, SubsetMask};
use choquet_dp::uncertainty::{LevelTable, UncertaintyLevels};

use crate::config::{DensityMode, Environment, RunConfig};
use crate::demo::{run_demo, OperatorKind};
use crate::CliError;

/// Largest K for which `measure` lists every subset.
pub const MAX_LISTED_LEVELS: usize = 10;
/// Largest allowed `|J_fuzzy - J_robust|` for `equiv`.
pub const EQUIVALENCE_TOL: f64 = 1e-6;

pub const VALUES_HEADER: &str = "state,V";
pub const RESIDUALS_HEADER: &str = "sweep,residual";
pub const DEMO_HEADER: &str = "operator,AvgRet,AvgRisk,episodes";
pub const ABLATION_HEADER: &str = "seed,K,AvgRet,AvgRisk,episodes";
pub const TRAIN_HEADER: &str = "iter,J_r,J_c,multiplier,fuzzy_loss";
pub const EQUIV_HEADER: &str = "quantity,fuzzy,robust,gap";

/// Environment with its level table: the double integrator perturbs
/// continuous successors, tabular problems shift successor indices.
struct Problem {
    cmdp: TabularCmdp,
    table: LevelTable,
    features: Option<Vec<Vec<f64>>>,
}

fn toy_cmdp(gamma: f64) -> Result<TabularCmdp, CliError> {
    Ok(TabularCmdp::try_from(CmdpParts {
        n_states: 1,
        n_actions: 1,
        transitions: vec![vec![(0, 1.0)]],
        reward: vec![1.0],
        cost: vec![0.0],
        gamma,
        d0: vec![1.0],
        budget: f64::INFINITY,
    })?)
}

fn problem(config: &RunConfig) -> Result<Problem, CliError> {
    let levels = UncertaintyLevels::new(config.k, config.eps_base, config.samples, config.seed)?;
    match config.env {
        Environment::DoubleIntegrator => {
            let env = build_double_integrator(DoubleIntegratorConfig {
                grid: config.grid,
                dynamics: config.dynamics,
                dt: config.dt,
                gamma: config.gamma.unwrap_or(0.95),
                budget: config.budget.unwrap_or(f64::INFINITY),
            })?;
            let grid = *env.grid();
            let table = LevelTable::from_successors(&env.successors, &levels, |s| grid.snap(s));
            let features = Some(env.features());
            Ok(Problem {
                cmdp: env.cmdp,
                table,
                features,
            })
        }
        Environment::Toy | Environment::File => {
            let mut cmdp = match config.env {
                Environment::Toy => toy_cmdp(config.gamma.unwrap_or(0.9))?,
                _ => {
                    let path = config
                        .cmdp_file
                        .as_ref()
                        .ok_or_else(|| CliError::Usage("env = file needs cmdp_file".into()))?;
                    let cmdp = load_cmdp(path)?;
                    match config.gamma {
                        Some(g) => cmdp.with_gamma(g)?,
                        None => cmdp,
                    }
                }
            };
            if let Some(b) = config.budget {
                cmdp = cmdp.with_budget(b)?;
            }
            let table = LevelTable::from_index_line(&cmdp, &levels);
            Ok(Problem {
                cmdp,
                table,
                features: None,
            })
        }
    }
}

/// Global measure from explicit densities, or `density_mass / K` per level.
pub fn global_measure(k: usize, densities: Option<&[f64]>, mass: f64) -> Result<FuzzyMeasure, CliError> {
    let g = match densities {
        Some(g) => g.to_vec(),
        None => vec![(mass / k as f64).clamp(1e-4, 1.0 - 1e-4); k],
    };
    if g.len() != k {
        return Err(CliError::Usage(format!("{} densities given for K = {k}", g.len())));
    }
    Ok(FuzzyMeasure::new(g)?)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn csv(header: &str) -> String {
    format!("{header}\n")
}

/// Value iteration with the configured operator. Exit 2 when `max_iter`
/// sweeps do not reach `tol`.
pub fn cmd_vi(config: &RunConfig) -> Result<i32, CliError> {
    let p = problem(config)?;
    let measures = Measures::Global(global_measure(config.k, config.densities.as_deref(), config.density_mass)?);
    let payoff = if config.multiplier == 0.0 {
        Payoff::Reward
    } else {
        Payoff::Lagrangian(config.multiplier)
    };
    let op = BellmanOperator::with_aggregation(&p.cmdp, config.operator.aggregation(), Some(&p.table), Some(&measures))?
        .payoff(payoff)
        .execution(config.execution);
    let (v, trace) = value_iteration(&op, None, config.tol, config.max_iter)?;

    let mut residuals = csv(RESIDUALS_HEADER);
    for (i, r) in trace.residuals.iter().enumerate() {
        let _ = writeln!(residuals, "{},{r:?}", i + 1);
    }
    let mut values = csv(VALUES_HEADER);
    for (s, x) in v.iter().enumerate() {
        let _ = writeln!(values, "{s},{x:?}");
    }
    write_file(&config.out_dir, "residuals.csv", &residuals)?;
    write_file(&config.out_dir, "values.csv", &values)?;
    if trace.converged {
        Ok(0)
    } else {
        eprintln!(
            "value iteration stopped after {} sweeps with residual {:e} > {:e}",
            trace.iterations,
            trace.last_residual().unwrap_or(f64::NAN),
            config.tol
        );
        Ok(2)
    }
}

/// Fuzzy, min-max and nominal planning on the double integrator, scored on
/// the same noisy rollouts for `config.seed`.
pub fn cmd_demo_di(config: &RunConfig) -> Result<i32, CliError> {
    let rows = run_demo(&config.demo_params(config.seed), &OperatorKind::ALL)?;
    let mut out = csv(DEMO_HEADER);
    for r in &rows {
        let _ = writeln!(out, "{},{:?},{:?},{}", r.operator.name(), r.avg_ret, r.avg_risk, r.episodes);
    }
    write_file(&config.out_dir, "demo.csv", &out)?;
    Ok(0)
}

/// Fuzzy demo over every `(seed, K)` in `seeds × ablation_k`.
pub fn cmd_ablation(config: &RunConfig) -> Result<i32, CliError> {
    if config.seeds.is_empty() || config.ablation_k.is_empty() {
        return Err(CliError::Usage("ablation needs non-empty seeds and ablation_k".into()));
    }
    let mut out = csv(ABLATION_HEADER);
    for &seed in &config.seeds {
        for &k in &config.ablation_k {
            let mut params = config.demo_params(seed);
            params.k = k;
            for r in run_demo(&params, &[OperatorKind::Fuzzy])? {
                let _ = writeln!(out, "{seed},{k},{:?},{:?},{}", r.avg_ret, r.avg_risk, r.episodes);
            }
        }
    }
    write_file(&config.out_dir, "ablation.csv", &out)?;
    Ok(0)
}

/// Primal-dual loop with learned per-state densities. Writes `train.csv`
/// and the final densities to `densities.ckpt`.
pub fn cmd_train(config: &RunConfig) -> Result<i32, CliError> {
    let p = problem(config)?;
    let n_states = p.cmdp.n_states();
    let mut model = match config.density_mode {
        DensityMode::Tabular => DensityModel::tabular(n_states, config.k),
        DensityMode::Network => {
            let features = p.features.clone().unwrap_or_else(|| DensityModel::one_hot_features(n_states));
            DensityModel::network(features, config.k, config.seed)?
        }
    }
    .with_learning_rate(config.learning_rate);
    let outcome = train(
        &p.cmdp,
        &p.table,
        &mut model,
        &TrainConfig {
            iters: config.iters,
            alpha: config.alpha,
            fuzzy_every: config.fuzzy_every,
            episodes: config.train_episodes,
            horizon: config.train_horizon,
            seed: config.seed,
            execution: config.execution,
        },
    )?;
    let mut out = csv(TRAIN_HEADER);
    for r in &outcome.rows {
        let _ = writeln!(out, "{},{:?},{:?},{:?},{:?}", r.iter, r.j_r, r.j_c, r.multiplier, r.fuzzy_loss);
    }
    write_file(&config.out_dir, "train.csv", &out)?;
    save_checkpoint(&model, config.out_dir.join("densities.ckpt"))?;
    Ok(0)
}

fn equiv_outputs(report: &EquivalenceReport) -> (String, String) {
    let mut out = csv(EQUIV_HEADER);
    let _ = writeln!(out, "J_r,{:?},{:?},{:?}", report.j_fuzzy_r, report.j_robust_r, report.gap_r());
    let _ = writeln!(out, "J_c,{:?},{:?},{:?}", report.j_fuzzy_c, report.j_robust_c, report.gap_c());
    (format!("{report}\n"), out)
}

/// Fuzzy vs robust comparison on `cmdp_file` with the kernels and
/// densities of `kernels_file`. Exit 3 when a precondition fails, 4 when a
/// gap exceeds [`EQUIVALENCE_TOL`] or the greedy policies differ.
pub fn cmd_equiv(config: &RunConfig) -> Result<i32, CliError> {
    let (cmdp_path, kernels_path) = match (&config.cmdp_file, &config.kernels_file) {
        (Some(c), Some(k)) => (c, k),
        _ => return Err(CliError::Usage("equiv needs cmdp_file and kernels_file".into())),
    };
    let mut cmdp = load_cmdp(cmdp_path)?;
    if let Some(g) = config.gamma {
        cmdp = cmdp.with_gamma(g)?;
    }
    let instance = load_instance(kernels_path, &cmdp)?;
    let (report, code) = match equivalence_check(&cmdp, &instance, config.execution) {
        Ok(report) => {
            let within = report.gap_r() <= EQUIVALENCE_TOL && report.gap_c() <= EQUIVALENCE_TOL;
            let code = if within && report.policies_match() { 0 } else { 4 };
            (report, code)
        }
        Err(LagrangianError::ConditionsUnmet { report, .. }) => (*report, 3),
        Err(e) => return Err(e.into()),
    };
    let (text, table) = equiv_outputs(&report);
    write_file(&config.out_dir, "equiv.txt", &text)?;
    write_file(&config.out_dir, "equiv.csv", &table)?;
    print!("{text}");
    match code {
        3 => eprintln!("equivalence preconditions unmet: {:?}", report.failed()),
        4 => eprintln!(
            "{}",
            CliError::GapExceeded(format!(
                "gap_r {:e}, gap_c {:e}, policies match {}",
                report.gap_r(),
                report.gap_c(),
                report.policies_match()
            ))
        ),
        _ => {}
    }
    Ok(code)
}

fn subset_label(mask: SubsetMask) -> String {
    let items: Vec<String> = mask.indices().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", items.join(","))
}

/// Text report for `measure`: λ, every subset with its dual (K ≤ 10), and
/// optionally the core extreme points.
pub fn measure_report(densities: &[f64], core: bool) -> Result<String, CliError> {
    let m = FuzzyMeasure::new(densities.to_vec())?;
    let k = m.k();
    let mut out = String::new();
    let _ = writeln!(out, "K = {k}");
    let _ = writeln!(out, "lambda = {:?}", m.lambda());
    if k <= MAX_LISTED_LEVELS {
        let _ = writeln!(out, "subset,measure,dual");
        for a in SubsetMask::all(k) {
            let _ = writeln!(
                out,
                "{},{:?},{:?}",
                subset_label(a),
                m.measure_of(a)?,
                m.dual_measure_of(a)?
            );
        }
    } else {
        let _ = writeln!(out, "subset table omitted for K > {MAX_LISTED_LEVELS}");
    }
    if core {
        let points = m.core_extreme_points()?;
        let _ = writeln!(out, "core extreme points: {}", points.len());
        for p in points.iter() {
            let order: Vec<String> = p.order.iter().map(|i| (i + 1).to_string()).collect();
            let weights: Vec<String> = p.weights.iter().map(|w| format!("{w:?}")).collect();
            let _ = writeln!(out, "({}) -> {}", order.join(","), weights.join(" "));
        }
    }
    Ok(out)
}

pub fn cmd_measure(densities: &[f64], core: bool) -> Result<i32, CliError> {
    print!("{}", measure_report(densities, core)?);
    Ok(0)
}
