//! Finite constrained MDPs with sparse nominal transition rows.

mod double_integrator;
mod io;

pub use double_integrator::{
    build_double_integrator, di_cost, di_reward, di_step, DoubleIntegrator, DoubleIntegratorConfig,
    Dynamics, GridSpec, StateVector, SAFE_LIMIT,
};
pub use io::{load_cmdp, parse_cmdp, parse_parts, write_cmdp, write_cmdp_string};

use std::fmt;

use thiserror::Error;

/// Row sums and initial distributions must match 1 within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CmdpError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid CMDP:\n{0}")]
    InvariantViolation(ValidationReport),
    #[error("action {0} is outside [-1, 1]")]
    ActionOutOfRange(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One sparse transition row entry: successor index and probability.
pub type Transition = (usize, f64);

/// Raw CMDP tables, not yet checked.
#[derive(Debug, Clone, PartialEq)]
pub struct CmdpParts {
    pub n_states: usize,
    pub n_actions: usize,
    /// Indexed by `state * n_actions + action`.
    pub transitions: Vec<Vec<Transition>>,
    /// Indexed by `state * n_actions + action`.
    pub reward: Vec<f64>,
    /// Indexed by `state * n_actions + action`.
    pub cost: Vec<f64>,
    pub gamma: f64,
    pub d0: Vec<f64>,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

/// Every invariant violation found in a set of CMDP tables.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            location: location.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{}: {}", v.location, v.message)?;
        }
        Ok(())
    }
}

/// Lists every violated invariant of `parts`.
pub fn validate(parts: &CmdpParts) -> ValidationReport {
    let mut report = ValidationReport::default();
    let pairs = parts.n_states * parts.n_actions;
    if parts.n_states == 0 {
        report.push("states", "at least one state is required");
    }
    if parts.n_actions == 0 {
        report.push("actions", "at least one action is required");
    }
    if !(parts.gamma >= 0.0 && parts.gamma < 1.0) {
        report.push("gamma", format!("must lie in [0, 1), got {}", parts.gamma));
    }
    if parts.budget.is_nan() || parts.budget < 0.0 {
        report.push("budget", format!("must be >= 0, got {}", parts.budget));
    }
    if parts.transitions.len() != pairs {
        report.push(
            "P0",
            format!("expected {pairs} rows, found {}", parts.transitions.len()),
        );
    }
    for (idx, row) in parts.transitions.iter().enumerate() {
        let (s, a) = (idx / parts.n_actions.max(1), idx % parts.n_actions.max(1));
        let loc = format!("P0 (state {s}, action {a})");
        let mut sum = 0.0;
        for &(next, p) in row {
            if next >= parts.n_states {
                report.push(&loc, format!("successor {next} out of range"));
            }
            if !(p >= 0.0) || !p.is_finite() {
                report.push(&loc, format!("probability {p} to {next} is not a nonnegative number"));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            report.push(&loc, format!("row sums to {sum}, expected 1"));
        }
    }
    for (name, table, nonnegative) in [("R", &parts.reward, false), ("C", &parts.cost, true)] {
        if table.len() != pairs {
            report.push(name, format!("expected {pairs} entries, found {}", table.len()));
        }
        for (idx, &x) in table.iter().enumerate() {
            let (s, a) = (idx / parts.n_actions.max(1), idx % parts.n_actions.max(1));
            if !x.is_finite() {
                report.push(format!("{name} (state {s}, action {a})"), "value is not finite");
            } else if nonnegative && x < 0.0 {
                report.push(format!("{name} (state {s}, action {a})"), format!("cost {x} is negative"));
            }
        }
    }
    if parts.d0.len() != parts.n_states {
        report.push(
            "D0",
            format!("expected {} entries, found {}", parts.n_states, parts.d0.len()),
        );
    }
    if parts.d0.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        report.push("D0", "entries must be nonnegative numbers");
    }
    let d0_sum: f64 = parts.d0.iter().sum();
    if (d0_sum - 1.0).abs() > STOCHASTIC_TOL {
        report.push("D0", format!("sums to {d0_sum}, expected 1"));
    }
    report
}

/// A validated finite constrained MDP `(S, A, p₀, r, c, γ, d₀, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCmdp {
    parts: CmdpParts,
}

impl TryFrom<CmdpParts> for TabularCmdp {
    type Error = CmdpError;

    fn try_from(parts: CmdpParts) -> Result<Self, Self::Error> {
        let report = validate(&parts);
        if report.is_empty() {
            Ok(TabularCmdp { parts })
        } else {
            Err(CmdpError::InvariantViolation(report))
        }
    }
}

impl TabularCmdp {
    pub fn n_states(&self) -> usize {
        self.parts.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.parts.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.parts.gamma
    }

    pub fn budget(&self) -> f64 {
        self.parts.budget
    }

    pub fn d0(&self) -> &[f64] {
        &self.parts.d0
    }

    #[inline]
    pub fn pair(&self, state: usize, action: usize) -> usize {
        state * self.parts.n_actions + action
    }

    #[inline]
    pub fn row(&self, state: usize, action: usize) -> &[Transition] {
        &self.parts.transitions[self.pair(state, action)]
    }

    #[inline]
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.parts.reward[self.pair(state, action)]
    }

    #[inline]
    pub fn cost(&self, state: usize, action: usize) -> f64 {
        self.parts.cost[self.pair(state, action)]
    }

    /// `E_{s' ~ p₀(·|s,a)}[V(s')]`.
    #[inline]
    pub fn expected(&self, state: usize, action: usize, values: &[f64]) -> f64 {
        self.row(state, action).iter().map(|&(j, p)| p * values[j]).sum()
    }

    pub fn parts(&self) -> &CmdpParts {
        &self.parts
    }

    pub fn into_parts(self) -> CmdpParts {
        self.parts
    }

    pub fn with_budget(mut self, budget: f64) -> Result<Self, CmdpError> {
        self.parts.budget = budget;
        TabularCmdp::try_from(self.parts)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self, CmdpError> {
        self.parts.gamma = gamma;
        TabularCmdp::try_from(self.parts)
    }

    /// `max |r|` over all state-action pairs.
    pub fn reward_bound(&self) -> f64 {
        self.parts.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn cost_bound(&self) -> f64 {
        self.parts.cost.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_state() -> CmdpParts {
        CmdpParts {
            n_states: 2,
            n_actions: 2,
            transitions: vec![
                vec![(0, 1.0)],
                vec![(1, 1.0)],
                vec![(0, 0.5), (1, 0.5)],
                vec![(1, 1.0)],
            ],
            reward: vec![0.0, 1.0, 2.0, 0.5],
            cost: vec![0.0, 1.0, 1.0, 0.0],
            gamma: 0.9,
            d0: vec![1.0, 0.0],
            budget: 1.0,
        }
    }

    #[test]
    fn valid_tables_pass() {
        let parts = two_state();
        assert!(validate(&parts).is_empty());
        let m = TabularCmdp::try_from(parts).unwrap();
        assert_eq!(m.n_states(), 2);
        assert_eq!(m.expected(1, 0, &[2.0, 4.0]), 3.0);
    }

    #[test]
    fn short_row_names_the_pair() {
        let mut parts = two_state();
        parts.transitions[3] = vec![(1, 0.9)];
        let report = validate(&parts);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].location.contains("state 1, action 1"));
    }

    #[test]
    fn gamma_one_is_rejected() {
        let mut parts = two_state();
        parts.gamma = 1.0;
        let err = TabularCmdp::try_from(parts).unwrap_err();
        match err {
            CmdpError::InvariantViolation(r) => assert_eq!(r.violations[0].location, "gamma"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn every_violation_is_listed() {
        let mut parts = two_state();
        parts.gamma = 1.5;
        parts.d0 = vec![0.5, 0.4];
        parts.cost[0] = -1.0;
        parts.transitions[0] = vec![(5, 1.0)];
        let report = validate(&parts);
        let locations: Vec<_> = report.violations.iter().map(|v| v.location.as_str()).collect();
        assert!(locations.contains(&"gamma"));
        assert!(locations.contains(&"D0"));
        assert!(locations.iter().any(|l| l.starts_with("C (state 0")));
        assert!(locations.iter().any(|l| l.starts_with("P0 (state 0, action 0)")));
    }
}
