//! Fuzzy vs min-max vs nominal value iteration on the double integrator,
//! scored by noisy closed-loop rollouts.

use choquet_dp::bellman::{value_iteration, Aggregation, BellmanOperator, Measures, Payoff, Policy};
use choquet_dp::cmdp::{build_double_integrator, di_cost, di_reward, DoubleIntegrator, DoubleIntegratorConfig, Dynamics, GridSpec, StateVector};
use choquet_dp::exec::Execution;
use choquet_dp::measure::FuzzyMeasure;
use choquet_dp::uncertainty::{counter_stream, standard_normal, LevelTable, UncertaintyLevels};

use crate::commands::global_measure;
use crate::CliError;

/// Rollout noise streams live far from the level streams of the same seed.
const ROLLOUT_STREAM: u64 = 1 << 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Fuzzy,
    MinMax,
    Nominal,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 3] = [OperatorKind::Fuzzy, OperatorKind::MinMax, OperatorKind::Nominal];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Fuzzy => "fuzzy",
            OperatorKind::MinMax => "minmax",
            OperatorKind::Nominal => "nominal",
        }
    }

    pub fn aggregation(self) -> Aggregation {
        match self {
            OperatorKind::Fuzzy => Aggregation::Fuzzy,
            OperatorKind::MinMax => Aggregation::Worst,
            OperatorKind::Nominal => Aggregation::Nominal,
        }
    }
}

impl std::str::FromStr for OperatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fuzzy" => Ok(OperatorKind::Fuzzy),
            "minmax" => Ok(OperatorKind::MinMax),
            "nominal" => Ok(OperatorKind::Nominal),
            other => Err(format!("unknown operator '{other}' (expected fuzzy|minmax|nominal)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoParams {
    pub grid: GridSpec,
    pub dynamics: Dynamics,
    pub dt: f64,
    pub gamma: f64,
    pub k: usize,
    pub eps_base: f64,
    pub samples: usize,
    /// Global densities; `None` spreads `density_mass` evenly over the levels.
    pub densities: Option<Vec<f64>>,
    pub density_mass: f64,
    /// Weight of the cost in the scalarised payoff `r - μ c`.
    pub multiplier: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub episodes: usize,
    pub horizon: usize,
    /// Rollout noise level: each step adds Gaussian state noise with standard
    /// deviation `eps_base · test_level`.
    pub test_level: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for DemoParams {
    fn default() -> Self {
        DemoParams {
            grid: GridSpec::default(),
            dynamics: Dynamics::Standard,
            dt: 0.1,
            gamma: 0.95,
            k: 15,
            eps_base: 0.01,
            samples: 5,
            densities: None,
            density_mass: 0.9,
            multiplier: 5.0,
            tol: 1e-4,
            max_iter: 5000,
            episodes: 100,
            horizon: 150,
            test_level: 5.0,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl DemoParams {
    pub fn test_noise(&self) -> f64 {
        self.eps_base * self.test_level
    }

    pub fn measure(&self) -> Result<FuzzyMeasure, CliError> {
        global_measure(self.k, self.densities.as_deref(), self.density_mass)
    }

    pub fn environment(&self) -> Result<DoubleIntegrator, CliError> {
        Ok(build_double_integrator(DoubleIntegratorConfig {
            grid: self.grid,
            dynamics: self.dynamics,
            dt: self.dt,
            gamma: self.gamma,
            budget: f64::INFINITY,
        })?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoRow {
    pub operator: OperatorKind,
    pub avg_ret: f64,
    pub avg_risk: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPolicy {
    pub policy: Policy,
    pub iterations: usize,
    pub converged: bool,
}

/// Greedy policy of value iteration on `r - μ c` under one operator.
pub fn plan(
    env: &DoubleIntegrator,
    table: &LevelTable,
    measures: &Measures,
    kind: OperatorKind,
    params: &DemoParams,
) -> Result<PlannedPolicy, CliError> {
    let op = BellmanOperator::with_aggregation(&env.cmdp, kind.aggregation(), Some(table), Some(measures))?
        .payoff(Payoff::Lagrangian(params.multiplier))
        .execution(params.execution);
    let (v, trace) = value_iteration(&op, None, params.tol, params.max_iter)?;
    Ok(PlannedPolicy {
        policy: op.greedy_policy(&v)?,
        iterations: trace.iterations,
        converged: trace.converged,
    })
}

/// Average undiscounted return and fraction of episodes that ever leave
/// the safe box. Episodes start at the origin; noise draws depend only on
/// `(seed, episode, step)`, so every policy faces the same disturbances.
pub fn rollouts(env: &DoubleIntegrator, policy: &Policy, params: &DemoParams) -> (f64, f64) {
    let grid = env.grid();
    let noise = params.test_noise();
    let mut total_return = 0.0;
    let mut violations = 0usize;
    for episode in 0..params.episodes {
        let mut rng = counter_stream(params.seed, ROLLOUT_STREAM + episode as u64, 0);
        let mut s = StateVector::default();
        let mut violated = false;
        for _ in 0..params.horizon {
            let action = policy.action(grid.snap(s)).unwrap_or(0);
            let mut next = env.step(s, action);
            if noise > 0.0 {
                next.x += noise * standard_normal(&mut rng);
                next.v += noise * standard_normal(&mut rng);
            }
            total_return += di_reward(next);
            violated |= di_cost(next) > 0.0;
            s = next;
        }
        violations += usize::from(violated);
    }
    let n = params.episodes.max(1) as f64;
    (total_return / n, violations as f64 / n)
}

/// Plans with every operator and scores each policy on the same episodes.
pub fn run_demo(params: &DemoParams, operators: &[OperatorKind]) -> Result<Vec<DemoRow>, CliError> {
    let env = params.environment()?;
    let levels = UncertaintyLevels::new(params.k, params.eps_base, params.samples, params.seed)?;
    let grid = *env.grid();
    let table = LevelTable::from_successors(&env.successors, &levels, |s| grid.snap(s));
    let measures = Measures::Global(params.measure()?);
    operators
        .iter()
        .map(|&kind| {
            let planned = plan(&env, &table, &measures, kind, params)?;
            if !planned.converged {
                return Err(CliError::NotConverged(format!(
                    "{} value iteration stopped after {} sweeps",
                    kind.name(),
                    planned.iterations
                )));
            }
            let (avg_ret, avg_risk) = rollouts(&env, &planned.policy, params);
            Ok(DemoRow {
                operator: kind,
                avg_ret,
                avg_risk,
                episodes: params.episodes,
            })
        })
        .collect()
}
