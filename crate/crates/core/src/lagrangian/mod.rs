//! Policy evaluation, the primal-dual constrained solver, exact robust
//! value iteration over finite kernel families, and the fuzzy/robust
//! equivalence harness.

mod equivalence;
mod kernels;

pub use equivalence::{
    core_mixture_rows, equivalence_check, Condition, ConditionCheck, DensitySpec, EquivalenceInstance,
    EquivalenceReport, MEMBERSHIP_TOL,
};
pub use kernels::{load_instance, parse_instance, write_instance_string, KernelFamily};

use thiserror::Error;

use crate::bellman::{
    value_iteration, Aggregation, BellmanError, BellmanOperator, Control, Measures, Payoff, Policy, ValueFunction,
};
use crate::cmdp::TabularCmdp;
use crate::exec::Execution;
use crate::uncertainty::LevelSource;

/// Sup-norm tolerance for fixed-point evaluations.
pub const EVAL_TOL: f64 = 1e-11;
pub const EVAL_MAX_ITER: usize = 200_000;
pub const DEFAULT_ALPHA: f64 = 0.05;
/// `|Δμ|` below which the multiplier counts as stationary.
pub const STATIONARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangianError {
    #[error(transparent)]
    Bellman(#[from] BellmanError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("step size must be positive, got {0}")]
    InvalidStepSize(f64),
    #[error("at least one iteration is required")]
    NoIterations,
    #[error("evaluation did not converge within {0} sweeps")]
    EvaluationDiverged(usize),
    #[error("invalid kernel family: {0}")]
    InvalidKernels(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("equivalence conditions unmet: {}", .failed.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", "))]
    ConditionsUnmet {
        failed: Vec<Condition>,
        report: Box<EquivalenceReport>,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LagrangianError {
    fn from(e: std::io::Error) -> Self {
        LagrangianError::Io(e.to_string())
    }
}

/// Which aggregations are used for the reward and the cost value.
#[derive(Clone, Copy)]
pub struct OperatorSpec<'a> {
    pub reward: Aggregation,
    pub cost: Aggregation,
    pub levels: Option<&'a dyn LevelSource>,
    pub measures: Option<&'a Measures>,
    pub execution: Execution,
}

impl<'a> OperatorSpec<'a> {
    pub fn nominal() -> Self {
        OperatorSpec {
            reward: Aggregation::Nominal,
            cost: Aggregation::Nominal,
            levels: None,
            measures: None,
            execution: Execution::default(),
        }
    }

    /// Choquet for rewards, dual Choquet for costs.
    pub fn fuzzy(levels: &'a dyn LevelSource, measures: &'a Measures) -> Self {
        OperatorSpec {
            reward: Aggregation::Fuzzy,
            cost: Aggregation::DualFuzzy,
            levels: Some(levels),
            measures: Some(measures),
            execution: Execution::default(),
        }
    }

    /// Worst level for rewards, best level for costs.
    pub fn minmax(levels: &'a dyn LevelSource) -> Self {
        OperatorSpec {
            reward: Aggregation::Worst,
            cost: Aggregation::Best,
            levels: Some(levels),
            measures: None,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn reward_operator(&self, cmdp: &'a TabularCmdp) -> Result<BellmanOperator<'a>, BellmanError> {
        Ok(BellmanOperator::with_aggregation(cmdp, self.reward, self.levels, self.measures)?
            .payoff(Payoff::Reward)
            .execution(self.execution))
    }

    pub fn cost_operator(&self, cmdp: &'a TabularCmdp) -> Result<BellmanOperator<'a>, BellmanError> {
        Ok(BellmanOperator::with_aggregation(cmdp, self.cost, self.levels, self.measures)?
            .payoff(Payoff::Cost)
            .execution(self.execution))
    }
}

/// Values and objectives of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub j_r: f64,
    pub j_c: f64,
    pub v_r: ValueFunction,
    pub v_c: ValueFunction,
}

fn fixed_point(op: &BellmanOperator<'_>) -> Result<ValueFunction, LagrangianError> {
    let (v, trace) = value_iteration(op, None, EVAL_TOL, EVAL_MAX_ITER)?;
    if !trace.converged {
        return Err(LagrangianError::EvaluationDiverged(trace.iterations));
    }
    Ok(v)
}

/// `J_r = Σ d₀ V_r^π` and `J_c = Σ d₀ V_c^π` under the operators of `spec`.
pub fn evaluate_policy(cmdp: &TabularCmdp, policy: &Policy, spec: &OperatorSpec<'_>) -> Result<Evaluation, LagrangianError> {
    let v_r = fixed_point(&spec.reward_operator(cmdp)?.policy(policy)?)?;
    let v_c = fixed_point(&spec.cost_operator(cmdp)?.policy(policy)?)?;
    Ok(Evaluation {
        j_r: v_r.expectation(cmdp.d0()),
        j_c: v_c.expectation(cmdp.d0()),
        v_r,
        v_c,
    })
}

/// `argmax_a Q_r(s,a) - μ Q_c(s,a)` per state, ties to the lowest action.
///
/// Tables are indexed `state * n_actions + action`.
pub fn greedy_policy(q_r: &[f64], q_c: &[f64], multiplier: f64, n_actions: usize) -> Result<Policy, LagrangianError> {
    if n_actions == 0 || q_r.len() != q_c.len() || q_r.len() % n_actions != 0 {
        return Err(LagrangianError::ShapeMismatch(format!(
            "Q_r has {} entries, Q_c has {}, {n_actions} actions",
            q_r.len(),
            q_c.len()
        )));
    }
    let actions = q_r
        .chunks(n_actions)
        .zip(q_c.chunks(n_actions))
        .map(|(r, c)| {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for a in 0..n_actions {
                let score = if multiplier == 0.0 { r[a] } else { r[a] - multiplier * c[a] };
                if score > best {
                    best = score;
                    arg = a;
                }
            }
            arg
        })
        .collect();
    Ok(Policy::Deterministic(actions))
}

/// `[μ + α (J_c - B)]⁺`.
pub fn multiplier_update(multiplier: f64, alpha: f64, j_c: f64, budget: f64) -> f64 {
    (multiplier + alpha * (j_c - budget)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub j_r: f64,
    pub j_c: f64,
    /// Multiplier used to pick the policy evaluated at this iteration.
    pub multiplier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Feasible iterate, stationary multiplier and unchanged policy.
    FeasibleStationary,
    IterationBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    pub multiplier: f64,
    pub alpha: f64,
    pub history: Vec<HistoryEntry>,
    pub stop: StopReason,
}

/// Alternates policy evaluation, projected multiplier ascent and greedy
/// improvement on `Q_r - μ Q_c`, starting from `μ = 0`.
///
/// The returned policy is greedy with respect to the returned multiplier.
pub fn primal_dual_solve(
    cmdp: &TabularCmdp,
    spec: &OperatorSpec<'_>,
    alpha: f64,
    iters: usize,
) -> Result<(Policy, LagrangianState), LagrangianError> {
    primal_dual_solve_from(cmdp, spec, alpha, iters, 0.0)
}

pub fn primal_dual_solve_from(
    cmdp: &TabularCmdp,
    spec: &OperatorSpec<'_>,
    alpha: f64,
    iters: usize,
    initial_multiplier: f64,
) -> Result<(Policy, LagrangianState), LagrangianError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(LagrangianError::InvalidStepSize(alpha));
    }
    if iters == 0 {
        return Err(LagrangianError::NoIterations);
    }
    let budget = cmdp.budget();
    let mut multiplier = initial_multiplier.max(0.0);
    let reward_op = spec.reward_operator(cmdp)?;
    let cost_op = spec.cost_operator(cmdp)?;

    // Start from the greedy policy of the reward values alone.
    let v0 = fixed_point(&reward_op)?;
    let q_r0 = reward_op.q_values(&v0)?;
    let mut policy = greedy_policy(&q_r0, &q_r0, 0.0, cmdp.n_actions())?;

    let mut history = Vec::new();
    let mut stop = StopReason::IterationBudget;
    for iteration in 0..iters {
        let eval = evaluate_policy(cmdp, &policy, spec)?;
        history.push(HistoryEntry {
            iteration,
            j_r: eval.j_r,
            j_c: eval.j_c,
            multiplier,
        });
        let next_multiplier = multiplier_update(multiplier, alpha, eval.j_c, budget);
        if !next_multiplier.is_finite() {
            return Err(BellmanError::NonFinite { state: 0 }.into());
        }
        let q_r = reward_op.q_values(&eval.v_r)?;
        let q_c = cost_op.q_values(&eval.v_c)?;
        let next_policy = greedy_policy(&q_r, &q_c, next_multiplier, cmdp.n_actions())?;
        let stationary = (next_multiplier - multiplier).abs() < STATIONARY_TOL;
        let feasible = eval.j_c <= budget;
        multiplier = next_multiplier;
        let unchanged = next_policy == policy;
        policy = next_policy;
        if feasible && stationary && unchanged {
            stop = StopReason::FeasibleStationary;
            break;
        }
    }
    Ok((
        policy,
        LagrangianState {
            multiplier,
            alpha,
            history,
            stop,
        },
    ))
}

/// Whether the robust oracle minimises or maximises over candidate rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

/// Value iteration whose next-state expectation is the exact minimum or
/// maximum over the candidate rows of `kernels`.
pub fn robust_vi_oracle(
    cmdp: &TabularCmdp,
    kernels: &KernelFamily,
    payoff: Payoff,
    sense: Sense,
    control: Control<'_>,
) -> Result<ValueFunction, LagrangianError> {
    kernels.check_shape(cmdp)?;
    let aggregation = match sense {
        Sense::Min => Aggregation::Worst,
        Sense::Max => Aggregation::Best,
    };
    let op = BellmanOperator::with_aggregation(cmdp, aggregation, Some(kernels), None)?
        .payoff(payoff)
        .control(control)?;
    fixed_point(&op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::CmdpParts;

    fn chain(budget: f64) -> TabularCmdp {
        // 0 -> 1 -> 1; reward 1 in state 0, 2 in state 1.
        TabularCmdp::try_from(CmdpParts {
            n_states: 2,
            n_actions: 1,
            transitions: vec![vec![(1, 1.0)], vec![(1, 1.0)]],
            reward: vec![1.0, 2.0],
            cost: vec![0.0, 0.0],
            gamma: 0.9,
            d0: vec![1.0, 0.0],
            budget,
        })
        .unwrap()
    }

    #[test]
    fn chain_matches_geometric_series() {
        let m = chain(1.0);
        let e = evaluate_policy(&m, &Policy::Deterministic(vec![0, 0]), &OperatorSpec::nominal()).unwrap();
        assert!((e.j_r - (1.0 + 0.9 * 2.0 / 0.1)).abs() <= 1e-9);
        assert_eq!(e.j_c, 0.0);
    }

    #[test]
    fn greedy_examples() {
        let p = greedy_policy(&[1.0, 2.0], &[0.0, 10.0], 0.2, 2).unwrap();
        assert_eq!(p, Policy::Deterministic(vec![0]));
        let p = greedy_policy(&[1.0, 2.0], &[0.0, 10.0], 0.0, 2).unwrap();
        assert_eq!(p, Policy::Deterministic(vec![1]));
        assert!(greedy_policy(&[1.0, 2.0], &[0.0], 0.0, 2).is_err());
    }

    #[test]
    fn multiplier_step() {
        assert!((multiplier_update(0.1, 0.05, 0.6, 1.0) - 0.08).abs() < 1e-15);
        assert_eq!(multiplier_update(0.01, 0.05, 0.0, 1.0), 0.0);
    }

    #[test]
    fn infinite_budget_keeps_multiplier_at_zero() {
        let m = chain(f64::INFINITY);
        let (_, state) = primal_dual_solve(&m, &OperatorSpec::nominal(), 0.05, 10).unwrap();
        assert!(state.history.iter().all(|h| h.multiplier == 0.0));
        assert_eq!(state.stop, StopReason::FeasibleStationary);
    }

    #[test]
    fn argument_checks() {
        let m = chain(1.0);
        assert!(matches!(
            primal_dual_solve(&m, &OperatorSpec::nominal(), 0.0, 10),
            Err(LagrangianError::InvalidStepSize(_))
        ));
        assert!(matches!(
            primal_dual_solve(&m, &OperatorSpec::nominal(), 0.1, 0),
            Err(LagrangianError::NoIterations)
        ));
    }
}
