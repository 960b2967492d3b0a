//! Nominal, fuzzy (Choquet), dual-fuzzy and min-max Bellman operators, and
//! synchronous value iteration.
//!
//! Every operator has the form
//!
//! ```text
//! F(V)(s) = ⊕_a [ payoff(s, a) + γ · agg(s, a, V) ]
//! ```
//!
//! where `⊕` is either the expectation under a fixed policy or the maximum
//! over actions, and `agg` reduces the `K` level values supplied by a
//! [`LevelSource`] (a Choquet integral, its dual, or an order statistic), or
//! is the plain nominal expectation.

use std::ops::{Deref, DerefMut};

use thiserror::Error;

use crate::choquet::Workspace;
use crate::cmdp::TabularCmdp;
use crate::exec::{fill_with, Execution};
use crate::measure::FuzzyMeasure;
use crate::uncertainty::LevelSource;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BellmanError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("backup produced a non-finite value at state {state}")]
    NonFinite { state: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
}

/// A bounded value table over states.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn zeros(n: usize) -> Self {
        ValueFunction(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        ValueFunction(vec![value; n])
    }

    pub fn sup_distance(&self, other: &[f64]) -> f64 {
        sup_distance(&self.0, other)
    }

    /// `Σ_s d(s) V(s)`.
    pub fn expectation(&self, distribution: &[f64]) -> f64 {
        self.0.iter().zip(distribution).map(|(v, p)| v * p).sum()
    }
}

impl Deref for ValueFunction {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ValueFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// A decision rule over a finite action set.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// One action per state.
    Deterministic(Vec<usize>),
    /// Row-stochastic table, indexed `[state][action]`.
    Stochastic(Vec<Vec<f64>>),
}

impl Policy {
    pub fn n_states(&self) -> usize {
        match self {
            Policy::Deterministic(a) => a.len(),
            Policy::Stochastic(rows) => rows.len(),
        }
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<(), BellmanError> {
        if self.n_states() != n_states {
            return Err(BellmanError::DimensionMismatch(format!(
                "policy covers {} states, CMDP has {n_states}",
                self.n_states()
            )));
        }
        match self {
            Policy::Deterministic(actions) => {
                if let Some(s) = actions.iter().position(|&a| a >= n_actions) {
                    return Err(BellmanError::DimensionMismatch(format!(
                        "policy picks action {} at state {s}, only {n_actions} exist",
                        actions[s]
                    )));
                }
            }
            Policy::Stochastic(rows) => {
                for (s, row) in rows.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.len() != n_actions || row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                        return Err(BellmanError::DimensionMismatch(format!(
                            "policy row {s} is not a distribution over {n_actions} actions"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn action(&self, state: usize) -> Option<usize> {
        match self {
            Policy::Deterministic(a) => Some(a[state]),
            Policy::Stochastic(_) => None,
        }
    }
}

/// Fuzzy measures used by Choquet aggregations.
#[derive(Debug, Clone, PartialEq)]
pub enum Measures {
    /// One measure shared by every state.
    Global(FuzzyMeasure),
    /// One measure per state.
    PerState(Vec<FuzzyMeasure>),
    /// One measure per state-action pair (`state * n_actions + action`).
    PerPair(Vec<FuzzyMeasure>),
}

impl Measures {
    #[inline]
    pub fn get(&self, state: usize, pair: usize) -> &FuzzyMeasure {
        match self {
            Measures::Global(m) => m,
            Measures::PerState(ms) => &ms[state],
            Measures::PerPair(ms) => &ms[pair],
        }
    }

    fn iter(&self) -> Box<dyn Iterator<Item = &FuzzyMeasure> + '_> {
        match self {
            Measures::Global(m) => Box::new(std::iter::once(m)),
            Measures::PerState(ms) | Measures::PerPair(ms) => Box::new(ms.iter()),
        }
    }

    pub fn all_convex(&self) -> bool {
        self.iter().all(FuzzyMeasure::is_convex)
    }
}

/// How next-state values are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// `E_{s'~p₀}[V(s')]`.
    Nominal,
    /// Choquet integral of the level values (min over the core).
    Fuzzy,
    /// Dual Choquet integral (max over the core).
    DualFuzzy,
    /// `min_k V̄_k`.
    Worst,
    /// `max_k V̄_k`.
    Best,
    /// `(1/K) Σ_k V̄_k`.
    LevelMean,
}

impl Aggregation {
    fn needs_levels(self) -> bool {
        self != Aggregation::Nominal
    }

    fn needs_measures(self) -> bool {
        matches!(self, Aggregation::Fuzzy | Aggregation::DualFuzzy)
    }
}

/// The per-step signal being accumulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    Reward,
    Cost,
    /// `r - multiplier · c`.
    Lagrangian(f64),
}

#[derive(Debug, Clone, Copy)]
pub enum Control<'a> {
    /// Maximise over actions, ties to the lowest index.
    Greedy,
    Policy(&'a Policy),
}

/// A configured Bellman operator over one CMDP.
#[derive(Clone, Copy)]
pub struct BellmanOperator<'a> {
    cmdp: &'a TabularCmdp,
    levels: Option<&'a dyn LevelSource>,
    measures: Option<&'a Measures>,
    aggregation: Aggregation,
    payoff: Payoff,
    control: Control<'a>,
    execution: Execution,
}

impl<'a> BellmanOperator<'a> {
    /// Expectation under the nominal kernel.
    pub fn nominal(cmdp: &'a TabularCmdp) -> Self {
        BellmanOperator {
            cmdp,
            levels: None,
            measures: None,
            aggregation: Aggregation::Nominal,
            payoff: Payoff::Reward,
            control: Control::Greedy,
            execution: Execution::default(),
        }
    }

    /// Choquet aggregation of the level values.
    pub fn fuzzy(
        cmdp: &'a TabularCmdp,
        levels: &'a dyn LevelSource,
        measures: &'a Measures,
    ) -> Result<Self, BellmanError> {
        Self::with_aggregation(cmdp, Aggregation::Fuzzy, Some(levels), Some(measures))
    }

    /// Dual Choquet aggregation of the level values.
    pub fn dual_fuzzy(
        cmdp: &'a TabularCmdp,
        levels: &'a dyn LevelSource,
        measures: &'a Measures,
    ) -> Result<Self, BellmanError> {
        Self::with_aggregation(cmdp, Aggregation::DualFuzzy, Some(levels), Some(measures))
    }

    /// `min_k` (`Worst`) or `max_k` (`Best`) of the level values.
    pub fn minmax(
        cmdp: &'a TabularCmdp,
        levels: &'a dyn LevelSource,
        sense: Aggregation,
    ) -> Result<Self, BellmanError> {
        assert!(matches!(sense, Aggregation::Worst | Aggregation::Best));
        Self::with_aggregation(cmdp, sense, Some(levels), None)
    }

    pub fn with_aggregation(
        cmdp: &'a TabularCmdp,
        aggregation: Aggregation,
        levels: Option<&'a dyn LevelSource>,
        measures: Option<&'a Measures>,
    ) -> Result<Self, BellmanError> {
        let op = BellmanOperator {
            cmdp,
            levels,
            measures,
            aggregation,
            payoff: Payoff::Reward,
            control: Control::Greedy,
            execution: Execution::default(),
        };
        op.check()?;
        Ok(op)
    }

    pub fn payoff(mut self, payoff: Payoff) -> Self {
        self.payoff = payoff;
        self
    }

    pub fn control(mut self, control: Control<'a>) -> Result<Self, BellmanError> {
        if let Control::Policy(p) = control {
            p.validate(self.cmdp.n_states(), self.cmdp.n_actions())?;
        }
        self.control = control;
        Ok(self)
    }

    pub fn policy(self, policy: &'a Policy) -> Result<Self, BellmanError> {
        self.control(Control::Policy(policy))
    }

    pub fn execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn cmdp(&self) -> &'a TabularCmdp {
        self.cmdp
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    fn check(&self) -> Result<(), BellmanError> {
        let n_pairs = self.cmdp.n_states() * self.cmdp.n_actions();
        if self.aggregation.needs_levels() {
            let levels = self
                .levels
                .ok_or_else(|| BellmanError::DimensionMismatch("level source required".into()))?;
            let k = levels.n_levels();
            if self.aggregation.needs_measures() {
                let measures = self
                    .measures
                    .ok_or_else(|| BellmanError::DimensionMismatch("fuzzy measures required".into()))?;
                let count = match measures {
                    Measures::Global(_) => None,
                    Measures::PerState(ms) => Some((ms.len(), self.cmdp.n_states(), "states")),
                    Measures::PerPair(ms) => Some((ms.len(), n_pairs, "state-action pairs")),
                };
                if let Some((got, want, what)) = count {
                    if got != want {
                        return Err(BellmanError::DimensionMismatch(format!(
                            "{got} measures for {want} {what}"
                        )));
                    }
                }
                if let Some(bad) = measures.iter().find(|m| m.k() != k) {
                    return Err(BellmanError::DimensionMismatch(format!(
                        "measure has K = {}, levels have K = {k}",
                        bad.k()
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn signal(&self, state: usize, action: usize) -> f64 {
        match self.payoff {
            Payoff::Reward => self.cmdp.reward(state, action),
            Payoff::Cost => self.cmdp.cost(state, action),
            Payoff::Lagrangian(mu) => self.cmdp.reward(state, action) - mu * self.cmdp.cost(state, action),
        }
    }

    /// Aggregated next-state value for one pair.
    #[inline]
    fn next_value(&self, scratch: &mut Scratch, state: usize, action: usize, values: &[f64]) -> f64 {
        if self.aggregation == Aggregation::Nominal {
            return self.cmdp.expected(state, action, values);
        }
        let pair = self.cmdp.pair(state, action);
        let levels = self.levels.expect("checked at construction");
        let lv = &mut scratch.levels;
        lv.resize(levels.n_levels(), 0.0);
        levels.level_values_into(pair, values, lv);
        let first = lv[0];
        if lv.iter().all(|&x| x == first) {
            // Every aggregation is idempotent on constants.
            return first;
        }
        match self.aggregation {
            Aggregation::Fuzzy | Aggregation::DualFuzzy => {
                let m = self.measures.expect("checked at construction").get(state, pair);
                if self.aggregation == Aggregation::Fuzzy {
                    scratch.choquet.integrate(lv, m)
                } else {
                    scratch.choquet.integrate_dual(lv, m)
                }
            }
            Aggregation::Worst => lv.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregation::Best => lv.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::LevelMean => lv.iter().sum::<f64>() / lv.len() as f64,
            Aggregation::Nominal => unreachable!(),
        }
    }

    /// `payoff(s, a) + γ · agg(s, a, V)`.
    #[inline]
    fn q(&self, scratch: &mut Scratch, state: usize, action: usize, values: &[f64]) -> f64 {
        self.signal(state, action) + self.cmdp.gamma() * self.next_value(scratch, state, action, values)
    }

    fn backup_state(&self, scratch: &mut Scratch, state: usize, values: &[f64]) -> (f64, usize) {
        match self.control {
            Control::Greedy => {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for a in 0..self.cmdp.n_actions() {
                    let q = self.q(scratch, state, a, values);
                    if q > best {
                        best = q;
                        arg = a;
                    }
                }
                (best, arg)
            }
            Control::Policy(Policy::Deterministic(actions)) => {
                let a = actions[state];
                (self.q(scratch, state, a, values), a)
            }
            Control::Policy(Policy::Stochastic(rows)) => {
                let mut total = 0.0;
                for (a, &p) in rows[state].iter().enumerate() {
                    if p > 0.0 {
                        total += p * self.q(scratch, state, a, values);
                    }
                }
                (total, 0)
            }
        }
    }

    fn check_values(&self, values: &[f64]) -> Result<(), BellmanError> {
        if values.len() != self.cmdp.n_states() {
            return Err(BellmanError::DimensionMismatch(format!(
                "value table has {} entries, CMDP has {} states",
                values.len(),
                self.cmdp.n_states()
            )));
        }
        Ok(())
    }

    /// `F(V)` written into `out`.
    pub fn apply_into(&self, values: &[f64], out: &mut [f64]) -> Result<(), BellmanError> {
        self.check_values(values)?;
        self.check_values(out)?;
        fill_with(self.execution, out, Scratch::default, |scratch, s, slot| {
            *slot = self.backup_state(scratch, s, values).0;
        });
        if let Some(state) = out.iter().position(|x| !x.is_finite()) {
            return Err(BellmanError::NonFinite { state });
        }
        Ok(())
    }

    pub fn apply(&self, values: &[f64]) -> Result<ValueFunction, BellmanError> {
        let mut out = vec![0.0; self.cmdp.n_states()];
        self.apply_into(values, &mut out)?;
        Ok(ValueFunction(out))
    }

    /// Action values `Q(s, a)`, indexed `state * n_actions + action`.
    pub fn q_values(&self, values: &[f64]) -> Result<Vec<f64>, BellmanError> {
        self.check_values(values)?;
        let n_actions = self.cmdp.n_actions();
        let mut out = vec![0.0; self.cmdp.n_states() * n_actions];
        fill_with(self.execution, &mut out, Scratch::default, |scratch, pair, slot| {
            *slot = self.q(scratch, pair / n_actions, pair % n_actions, values);
        });
        Ok(out)
    }

    /// Greedy actions with respect to this operator's action values.
    pub fn greedy_policy(&self, values: &[f64]) -> Result<Policy, BellmanError> {
        self.check_values(values)?;
        let greedy = BellmanOperator {
            control: Control::Greedy,
            ..*self
        };
        let mut actions = vec![0usize; self.cmdp.n_states()];
        fill_with(self.execution, &mut actions, Scratch::default, |scratch, s, slot| {
            *slot = greedy.backup_state(scratch, s, values).1;
        });
        Ok(Policy::Deterministic(actions))
    }
}

#[derive(Default)]
struct Scratch {
    levels: Vec<f64>,
    choquet: Workspace,
}

/// Residual history of a value-iteration run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    /// `‖V^{n} - V^{n-1}‖∞` for sweeps `n = 1, 2, …`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl IterationTrace {
    pub fn last_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }

    /// Least-squares slope of `ln(residual)` against the sweep index,
    /// ignoring zero residuals.
    pub fn log_residual_slope(&self) -> Option<f64> {
        let points: Vec<(f64, f64)> = self
            .residuals
            .iter()
            .enumerate()
            .filter(|(_, r)| **r > 0.0)
            .map(|(i, r)| (i as f64, r.ln()))
            .collect();
        if points.len() < 2 {
            return None;
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// Synchronous value iteration from `initial` (zeros when `None`).
///
/// Stops as soon as a sweep changes `V` by at most `tol` in sup-norm, or
/// after `max_iter` sweeps.
pub fn value_iteration(
    op: &BellmanOperator<'_>,
    initial: Option<ValueFunction>,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueFunction, IterationTrace), BellmanError> {
    if !(tol > 0.0) {
        return Err(BellmanError::InvalidTolerance(tol));
    }
    let n = op.cmdp().n_states();
    let mut current = initial.unwrap_or_else(|| ValueFunction::zeros(n));
    op.check_values(&current)?;
    let mut next = ValueFunction::zeros(n);
    let mut trace = IterationTrace::default();
    for _ in 0..max_iter {
        op.apply_into(&current, &mut next)?;
        let residual = sup_distance(&current, &next);
        std::mem::swap(&mut current, &mut next);
        trace.residuals.push(residual);
        trace.iterations += 1;
        if residual <= tol {
            trace.converged = true;
            break;
        }
    }
    Ok((current, trace))
}

/// `F(V)` under the Choquet aggregation for a fixed policy.
pub fn fuzzy_backup(
    cmdp: &TabularCmdp,
    values: &[f64],
    measures: &Measures,
    levels: &dyn LevelSource,
    policy: &Policy,
) -> Result<ValueFunction, BellmanError> {
    BellmanOperator::fuzzy(cmdp, levels, measures)?.policy(policy)?.apply(values)
}

/// Dual-Choquet backup of the cost value for a fixed policy.
pub fn dual_fuzzy_backup(
    cmdp: &TabularCmdp,
    cost_values: &[f64],
    measures: &Measures,
    levels: &dyn LevelSource,
    policy: &Policy,
) -> Result<ValueFunction, BellmanError> {
    BellmanOperator::dual_fuzzy(cmdp, levels, measures)?
        .payoff(Payoff::Cost)
        .policy(policy)?
        .apply(cost_values)
}

/// Min (`Worst`) or max (`Best`) over level values for a fixed policy.
pub fn minmax_backup(
    cmdp: &TabularCmdp,
    values: &[f64],
    levels: &dyn LevelSource,
    policy: &Policy,
    sense: Aggregation,
) -> Result<ValueFunction, BellmanError> {
    BellmanOperator::minmax(cmdp, levels, sense)?.policy(policy)?.apply(values)
}

pub fn nominal_backup(cmdp: &TabularCmdp, values: &[f64], policy: &Policy) -> Result<ValueFunction, BellmanError> {
    BellmanOperator::nominal(cmdp).policy(policy)?.apply(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::CmdpParts;
    use crate::uncertainty::{LevelTable, UncertaintyLevels};

    fn self_loop(gamma: f64) -> TabularCmdp {
        TabularCmdp::try_from(CmdpParts {
            n_states: 1,
            n_actions: 1,
            transitions: vec![vec![(0, 1.0)]],
            reward: vec![1.0],
            cost: vec![0.0],
            gamma,
            d0: vec![1.0],
            budget: f64::INFINITY,
        })
        .unwrap()
    }

    #[test]
    fn self_loop_fixed_point() {
        let m = self_loop(0.5);
        let op = BellmanOperator::nominal(&m);
        let (v, trace) = value_iteration(&op, None, 1e-10, 1000).unwrap();
        assert!((v[0] - 2.0).abs() <= 1e-10);
        assert!(trace.converged);
        assert!(trace.iterations <= 40, "{}", trace.iterations);
    }

    #[test]
    fn fuzzy_self_loop_fixed_point() {
        let m = self_loop(0.5);
        let levels = UncertaintyLevels::new(3, 0.7, 5, 3).unwrap();
        let table = LevelTable::from_index_line(&m, &levels);
        let measures = Measures::Global(FuzzyMeasure::new(vec![0.2, 0.2, 0.2]).unwrap());
        let op = BellmanOperator::fuzzy(&m, &table, &measures).unwrap();
        let (v, _) = value_iteration(&op, None, 1e-12, 1000).unwrap();
        assert!((v[0] - 2.0).abs() <= 1e-11);
    }

    #[test]
    fn fixed_point_start_has_zero_residual() {
        let m = self_loop(0.5);
        let op = BellmanOperator::nominal(&m);
        let (_, trace) = value_iteration(&op, Some(ValueFunction(vec![2.0])), 1e-10, 10).unwrap();
        assert_eq!(trace.residuals[0], 0.0);
        assert_eq!(trace.iterations, 1);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let m = self_loop(0.99);
        let op = BellmanOperator::nominal(&m);
        let (_, trace) = value_iteration(&op, None, 1e-10, 5).unwrap();
        assert!(!trace.converged);
        assert_eq!(trace.residuals.len(), 5);
    }

    #[test]
    fn dimension_checks() {
        let m = self_loop(0.5);
        let levels = UncertaintyLevels::new(3, 0.1, 2, 0).unwrap();
        let table = LevelTable::from_index_line(&m, &levels);
        let wrong_k = Measures::Global(FuzzyMeasure::new(vec![0.3, 0.3]).unwrap());
        assert!(matches!(
            BellmanOperator::fuzzy(&m, &table, &wrong_k),
            Err(BellmanError::DimensionMismatch(_))
        ));
        let op = BellmanOperator::nominal(&m);
        assert!(op.apply(&[0.0, 1.0]).is_err());
        assert!(op.policy(&Policy::Deterministic(vec![3])).is_err());
        assert!(value_iteration(&op, None, 0.0, 10).is_err());
    }

    #[test]
    fn non_finite_values_are_reported() {
        let m = self_loop(0.5);
        let op = BellmanOperator::nominal(&m);
        assert_eq!(op.apply(&[f64::NAN]), Err(BellmanError::NonFinite { state: 0 }));
    }

    #[test]
    fn greedy_ties_pick_lowest_action() {
        let m = TabularCmdp::try_from(CmdpParts {
            n_states: 1,
            n_actions: 3,
            transitions: vec![vec![(0, 1.0)]; 3],
            reward: vec![1.0, 2.0, 2.0],
            cost: vec![0.0; 3],
            gamma: 0.5,
            d0: vec![1.0],
            budget: 1.0,
        })
        .unwrap();
        let op = BellmanOperator::nominal(&m);
        assert_eq!(op.greedy_policy(&[0.0]).unwrap(), Policy::Deterministic(vec![1]));
    }

    #[test]
    fn log_slope_of_geometric_sequence() {
        let trace = IterationTrace {
            residuals: (0..20).map(|i| 0.5f64.powi(i)).collect(),
            iterations: 20,
            converged: true,
        };
        assert!((trace.log_residual_slope().unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }
}
