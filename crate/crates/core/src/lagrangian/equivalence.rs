//! Checks that fuzzy evaluation over a kernel family agrees with exact
//! robust value iteration over an uncertainty set, once the set contains the
//! core of the measure and the one-step extremal rows lie in that core.

use std::fmt;

use super::kernels::KernelFamily;
use super::{fixed_point, robust_vi_oracle, LagrangianError, Sense};
use crate::bellman::{Aggregation, BellmanOperator, Control, Measures, Payoff, Policy};
use crate::cmdp::{TabularCmdp, Transition};
use crate::exec::Execution;
use crate::measure::{FuzzyMeasure, MeasureError};

/// Row membership and extremal-value comparisons use this tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Densities over the candidate kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum DensitySpec {
    Global(Vec<f64>),
    /// Indexed `state * n_actions + action`.
    PerPair(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceInstance {
    /// Base kernels the measure is defined over.
    pub kernels: KernelFamily,
    pub densities: DensitySpec,
    /// Explicit uncertainty set; the core mixtures of `kernels` when absent.
    pub uncertainty: Option<KernelFamily>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// Every measure has `λ ≥ 0`.
    Convexity,
    /// (1) every core extreme point, as a mixture row, belongs to the set.
    CoreInUncertaintySet,
    /// (2) the reward minimiser over the set is attained in the core.
    RewardArgminInCore,
    /// (3) the cost maximiser over the set is attained in the core.
    CostArgmaxInCore,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Convexity => "convexity",
            Condition::CoreInUncertaintySet => "core in uncertainty set",
            Condition::RewardArgminInCore => "reward argmin in core",
            Condition::CostArgmaxInCore => "cost argmax in core",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub condition: Condition,
    pub satisfied: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub conditions: Vec<ConditionCheck>,
    pub j_fuzzy_r: f64,
    pub j_robust_r: f64,
    pub j_fuzzy_c: f64,
    pub j_robust_c: f64,
    pub fuzzy_policy: Option<Policy>,
    pub robust_policy: Option<Policy>,
}

impl EquivalenceReport {
    pub fn gap_r(&self) -> f64 {
        (self.j_fuzzy_r - self.j_robust_r).abs()
    }

    pub fn gap_c(&self) -> f64 {
        (self.j_fuzzy_c - self.j_robust_c).abs()
    }

    pub fn policies_match(&self) -> bool {
        self.fuzzy_policy.is_some() && self.fuzzy_policy == self.robust_policy
    }

    pub fn conditions_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied)
    }

    pub fn failed(&self) -> Vec<Condition> {
        self.conditions.iter().filter(|c| !c.satisfied).map(|c| c.condition).collect()
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.conditions {
            writeln!(
                f,
                "condition {}: {} ({})",
                c.condition,
                if c.satisfied { "ok" } else { "FAILED" },
                c.detail
            )?;
        }
        writeln!(f, "J_r fuzzy {:.12} robust {:.12} gap {:.3e}", self.j_fuzzy_r, self.j_robust_r, self.gap_r())?;
        writeln!(f, "J_c fuzzy {:.12} robust {:.12} gap {:.3e}", self.j_fuzzy_c, self.j_robust_c, self.gap_c())?;
        write!(f, "greedy policies match: {}", self.policies_match())
    }
}

fn dense(row: &[Transition], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for &(j, p) in row {
        out[j] += p;
    }
    out
}

fn sparse(row: &[f64]) -> Vec<Transition> {
    row.iter().enumerate().filter(|(_, p)| **p != 0.0).map(|(j, p)| (j, *p)).collect()
}

fn same_row(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= MEMBERSHIP_TOL)
}

/// Mixture rows `Σ_k P_k row_k` for every extreme point `P` of the core of
/// `measure`, duplicates removed, in permutation order.
pub fn core_mixture_rows(
    rows: &[Vec<Transition>],
    measure: &FuzzyMeasure,
    n_states: usize,
) -> Result<Vec<Vec<Transition>>, MeasureError> {
    let core = measure.core_extreme_points()?;
    let dense_rows: Vec<Vec<f64>> = rows.iter().map(|r| dense(r, n_states)).collect();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for point in core.iter() {
        let mut mix = vec![0.0; n_states];
        for (w, row) in point.weights.iter().zip(&dense_rows) {
            for (m, p) in mix.iter_mut().zip(row) {
                *m += w * p;
            }
        }
        if !out.iter().any(|r| same_row(r, &mix)) {
            out.push(mix);
        }
    }
    Ok(out.iter().map(|r| sparse(r)).collect())
}

fn build_measures(spec: &DensitySpec, n_pairs: usize) -> Result<Measures, LagrangianError> {
    let make = |g: &[f64]| FuzzyMeasure::new(g.to_vec()).map_err(|e| LagrangianError::InvalidKernels(e.to_string()));
    Ok(match spec {
        DensitySpec::Global(g) => Measures::Global(make(g)?),
        DensitySpec::PerPair(rows) => {
            if rows.len() != n_pairs {
                return Err(LagrangianError::ShapeMismatch(format!(
                    "{} density rows for {n_pairs} pairs",
                    rows.len()
                )));
            }
            Measures::PerPair(rows.iter().map(|g| make(g)).collect::<Result<_, _>>()?)
        }
    })
}

fn row_expectation(row: &[Transition], values: &[f64]) -> f64 {
    row.iter().map(|&(j, p)| p * values[j]).sum()
}

/// Largest amount by which the extremum over `set` beats the extremum over
/// `core`, over all pairs; `sense` picks min or max.
fn extremal_excess(
    core: &[Vec<Vec<Transition>>],
    set: &KernelFamily,
    values: &[f64],
    sense: Sense,
) -> (f64, usize) {
    let mut worst = (0.0, 0);
    for (pair, core_rows) in core.iter().enumerate() {
        let core_vals = core_rows.iter().map(|r| row_expectation(r, values));
        let set_vals = set.candidates(pair).iter().map(|r| row_expectation(r, values));
        let excess = match sense {
            Sense::Min => core_vals.fold(f64::INFINITY, f64::min) - set_vals.fold(f64::INFINITY, f64::min),
            Sense::Max => set_vals.fold(f64::NEG_INFINITY, f64::max) - core_vals.fold(f64::NEG_INFINITY, f64::max),
        };
        if excess > worst.0 {
            worst = (excess, pair);
        }
    }
    worst
}

/// Verifies the equivalence conditions and compares fuzzy and robust
/// objectives.
///
/// The fuzzy side runs greedy Choquet value iteration over the candidate
/// expectations of `instance.kernels`, then evaluates the cost of its greedy
/// policy with the dual integral. The robust side does the same with exact
/// minima and maxima over the uncertainty set. Conditions (2) and (3) are
/// checked per state-action pair at the robust fixed points.
pub fn equivalence_check(
    cmdp: &TabularCmdp,
    instance: &EquivalenceInstance,
    execution: Execution,
) -> Result<EquivalenceReport, LagrangianError> {
    let kernels = &instance.kernels;
    kernels.check_shape(cmdp)?;
    let n_pairs = cmdp.n_states() * cmdp.n_actions();
    let k = kernels
        .uniform_count()
        .ok_or_else(|| LagrangianError::InvalidKernels("every pair needs the same number of candidates".into()))?;
    let measures = build_measures(&instance.densities, n_pairs)?;
    let pair_measure = |pair: usize| measures.get(pair / cmdp.n_actions(), pair);
    if let Some(p) = (0..n_pairs).find(|&p| pair_measure(p).k() != k) {
        return Err(LagrangianError::ShapeMismatch(format!(
            "measure of pair {p} has {} densities for {k} kernels",
            pair_measure(p).k()
        )));
    }

    let mut report = EquivalenceReport {
        conditions: Vec::new(),
        j_fuzzy_r: f64::NAN,
        j_robust_r: f64::NAN,
        j_fuzzy_c: f64::NAN,
        j_robust_c: f64::NAN,
        fuzzy_policy: None,
        robust_policy: None,
    };

    // Fuzzy side, meaningful for any λ.
    let fuzzy = BellmanOperator::with_aggregation(cmdp, Aggregation::Fuzzy, Some(kernels), Some(&measures))?
        .execution(execution);
    let v_fr = fixed_point(&fuzzy)?;
    let fuzzy_policy = fuzzy.greedy_policy(&v_fr)?;
    let dual = BellmanOperator::with_aggregation(cmdp, Aggregation::DualFuzzy, Some(kernels), Some(&measures))?
        .payoff(Payoff::Cost)
        .execution(execution)
        .policy(&fuzzy_policy)?;
    let v_fc = fixed_point(&dual)?;
    report.j_fuzzy_r = v_fr.expectation(cmdp.d0());
    report.j_fuzzy_c = v_fc.expectation(cmdp.d0());
    report.fuzzy_policy = Some(fuzzy_policy);

    let nonconvex = (0..n_pairs).find(|&p| !pair_measure(p).is_convex());
    report.conditions.push(ConditionCheck {
        condition: Condition::Convexity,
        satisfied: nonconvex.is_none(),
        detail: match nonconvex {
            Some(p) => format!("pair {p} has λ = {}", pair_measure(p).lambda()),
            None => "all λ ≥ 0".into(),
        },
    });
    if nonconvex.is_some() {
        return Err(LagrangianError::ConditionsUnmet {
            failed: report.failed(),
            report: Box::new(report),
        });
    }

    let core: Vec<Vec<Vec<Transition>>> = (0..n_pairs)
        .map(|p| core_mixture_rows(kernels.candidates(p), pair_measure(p), cmdp.n_states()))
        .collect::<Result<_, _>>()
        .map_err(|e| LagrangianError::InvalidKernels(e.to_string()))?;
    let set = match &instance.uncertainty {
        Some(u) => {
            u.check_shape(cmdp)?;
            u.clone()
        }
        None => KernelFamily::new(cmdp.n_states(), cmdp.n_actions(), core.clone())?,
    };

    // (1) core ⊆ P, vertex by vertex.
    let mut missing = None;
    'pairs: for (pair, rows) in core.iter().enumerate() {
        let members: Vec<Vec<f64>> = set.candidates(pair).iter().map(|r| dense(r, cmdp.n_states())).collect();
        for (v, row) in rows.iter().enumerate() {
            let row = dense(row, cmdp.n_states());
            if !members.iter().any(|m| same_row(m, &row)) {
                missing = Some((pair, v));
                break 'pairs;
            }
        }
    }
    report.conditions.push(ConditionCheck {
        condition: Condition::CoreInUncertaintySet,
        satisfied: missing.is_none(),
        detail: match missing {
            Some((p, v)) => format!("core vertex {v} of pair {p} is not in the set"),
            None => "every core vertex is a member".into(),
        },
    });

    // Robust side.
    let v_rr = robust_vi_oracle(cmdp, &set, Payoff::Reward, Sense::Min, Control::Greedy)?;
    let worst = BellmanOperator::with_aggregation(cmdp, Aggregation::Worst, Some(&set), None)?.execution(execution);
    let robust_policy = worst.greedy_policy(&v_rr)?;
    let v_rc = robust_vi_oracle(cmdp, &set, Payoff::Cost, Sense::Max, Control::Policy(&robust_policy))?;
    report.j_robust_r = v_rr.expectation(cmdp.d0());
    report.j_robust_c = v_rc.expectation(cmdp.d0());
    report.robust_policy = Some(robust_policy);

    // (2) and (3) at the robust fixed points.
    for (condition, values, sense) in [
        (Condition::RewardArgminInCore, &v_rr, Sense::Min),
        (Condition::CostArgmaxInCore, &v_rc, Sense::Max),
    ] {
        let scale = 1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (excess, pair) = extremal_excess(&core, &set, values, sense);
        let satisfied = excess <= MEMBERSHIP_TOL * scale;
        report.conditions.push(ConditionCheck {
            condition,
            satisfied,
            detail: if satisfied {
                "attained by a core vertex at every pair".into()
            } else {
                format!("pair {pair}: the set beats the core by {excess:.3e}")
            },
        });
    }

    if report.conditions_hold() {
        Ok(report)
    } else {
        Err(LagrangianError::ConditionsUnmet {
            failed: report.failed(),
            report: Box::new(report),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::CmdpParts;

    fn cmdp() -> TabularCmdp {
        TabularCmdp::try_from(CmdpParts {
            n_states: 2,
            n_actions: 2,
            transitions: vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 1.0)], vec![(1, 1.0)]],
            reward: vec![1.0, 0.5, 0.0, 2.0],
            cost: vec![0.0, 1.0, 1.0, 0.5],
            gamma: 0.8,
            d0: vec![0.5, 0.5],
            budget: 3.0,
        })
        .unwrap()
    }

    fn two_kernels() -> KernelFamily {
        let rows = vec![vec![(0, 1.0)], vec![(0, 0.2), (1, 0.8)]];
        KernelFamily::new(2, 2, vec![rows; 4]).unwrap()
    }

    #[test]
    fn single_kernel_has_zero_gap() {
        let m = cmdp();
        let inst = EquivalenceInstance {
            kernels: KernelFamily::nominal(&m),
            densities: DensitySpec::Global(vec![0.5]),
            uncertainty: None,
        };
        let r = equivalence_check(&m, &inst, Execution::Sequential).unwrap();
        assert_eq!(r.gap_r(), 0.0);
        assert_eq!(r.gap_c(), 0.0);
        assert!(r.policies_match());
    }

    #[test]
    fn core_mixtures_give_small_gaps() {
        let m = cmdp();
        let inst = EquivalenceInstance {
            kernels: two_kernels(),
            densities: DensitySpec::Global(vec![0.3, 0.4]),
            uncertainty: None,
        };
        let r = equivalence_check(&m, &inst, Execution::Sequential).unwrap();
        assert!(r.gap_r() <= 1e-6 && r.gap_c() <= 1e-6, "{r}");
        assert!(r.policies_match());
    }

    #[test]
    fn missing_core_vertex_fails_condition_one() {
        let m = cmdp();
        let inst = EquivalenceInstance {
            kernels: two_kernels(),
            densities: DensitySpec::Global(vec![0.3, 0.4]),
            uncertainty: Some(KernelFamily::new(2, 2, vec![vec![vec![(0, 1.0)]]; 4]).unwrap()),
        };
        match equivalence_check(&m, &inst, Execution::Sequential) {
            Err(LagrangianError::ConditionsUnmet { failed, .. }) => {
                assert!(failed.contains(&Condition::CoreInUncertaintySet))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn subadditive_measure_fails_convexity() {
        let m = cmdp();
        let inst = EquivalenceInstance {
            kernels: two_kernels(),
            densities: DensitySpec::Global(vec![0.6, 0.6]),
            uncertainty: None,
        };
        match equivalence_check(&m, &inst, Execution::Sequential) {
            Err(LagrangianError::ConditionsUnmet { failed, .. }) => assert_eq!(failed, vec![Condition::Convexity]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn core_rows_are_mixtures() {
        let rows = vec![vec![(0, 1.0)], vec![(1, 1.0)]];
        let m = FuzzyMeasure::new(vec![0.3, 0.3]).unwrap();
        let mixes = core_mixture_rows(&rows, &m, 2).unwrap();
        assert_eq!(mixes.len(), 2);
        assert!((mixes[0][0].1 - 0.3).abs() < 1e-12);
        assert!((mixes[1][0].1 - 0.7).abs() < 1e-12);
    }
}
