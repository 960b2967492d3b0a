//! Finite families of candidate transition rows and their text format.
//!
//! ```text
//! # one line per candidate row, candidates of a pair keep file order
//! KERNELS
//! 0 0 0:1
//! 0 0 0:0.5 1:0.5
//! # densities over the candidates, shared by every pair
//! DENSITIES
//! 0.3 0.3
//! # or one line per pair: state action g_1 ... g_K
//! PAIR_DENSITIES
//! 0 0 0.3 0.3
//! # optional explicit uncertainty set, same layout as KERNELS
//! UNCERTAINTY
//! 0 0 0:0.7 1:0.3
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::equivalence::{DensitySpec, EquivalenceInstance};
use super::LagrangianError;
use crate::cmdp::{TabularCmdp, Transition, STOCHASTIC_TOL};
use crate::uncertainty::LevelSource;

/// Candidate transition rows per state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFamily {
    n_states: usize,
    n_actions: usize,
    candidates: Vec<Vec<Vec<Transition>>>,
    max_count: usize,
}

impl KernelFamily {
    /// `candidates[state * n_actions + action]` lists the rows of one pair.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        candidates: Vec<Vec<Vec<Transition>>>,
    ) -> Result<Self, LagrangianError> {
        if candidates.len() != n_states * n_actions {
            return Err(LagrangianError::InvalidKernels(format!(
                "{} pairs given, expected {}",
                candidates.len(),
                n_states * n_actions
            )));
        }
        for (pair, rows) in candidates.iter().enumerate() {
            let (s, a) = (pair / n_actions, pair % n_actions);
            if rows.is_empty() {
                return Err(LagrangianError::InvalidKernels(format!("no candidate for ({s}, {a})")));
            }
            for (k, row) in rows.iter().enumerate() {
                if row.iter().any(|&(j, p)| j >= n_states || !(p >= 0.0) || !p.is_finite()) {
                    return Err(LagrangianError::InvalidKernels(format!(
                        "candidate {k} of ({s}, {a}) has an invalid entry"
                    )));
                }
                let sum: f64 = row.iter().map(|e| e.1).sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(LagrangianError::InvalidKernels(format!(
                        "candidate {k} of ({s}, {a}) sums to {sum}"
                    )));
                }
            }
        }
        let max_count = candidates.iter().map(Vec::len).max().unwrap_or(0);
        Ok(KernelFamily {
            n_states,
            n_actions,
            candidates,
            max_count,
        })
    }

    /// The nominal rows of `cmdp`, one candidate per pair.
    pub fn nominal(cmdp: &TabularCmdp) -> Self {
        KernelFamily {
            n_states: cmdp.n_states(),
            n_actions: cmdp.n_actions(),
            candidates: cmdp.parts().transitions.iter().map(|r| vec![r.clone()]).collect(),
            max_count: 1,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn candidates(&self, pair: usize) -> &[Vec<Transition>] {
        &self.candidates[pair]
    }

    /// The common candidate count, if every pair has the same number.
    pub fn uniform_count(&self) -> Option<usize> {
        let n = self.candidates.first()?.len();
        self.candidates.iter().all(|c| c.len() == n).then_some(n)
    }

    pub fn max_count(&self) -> usize {
        self.max_count
    }

    pub(crate) fn check_shape(&self, cmdp: &TabularCmdp) -> Result<(), LagrangianError> {
        if self.n_states != cmdp.n_states() || self.n_actions != cmdp.n_actions() {
            return Err(LagrangianError::ShapeMismatch(format!(
                "kernels cover {}x{} pairs, CMDP has {}x{}",
                self.n_states,
                self.n_actions,
                cmdp.n_states(),
                cmdp.n_actions()
            )));
        }
        Ok(())
    }
}

fn row_expectation(row: &[Transition], values: &[f64]) -> f64 {
    row.iter().map(|&(j, p)| p * values[j]).sum()
}

/// Level `k` is the expectation under candidate `k`. Pairs with fewer
/// candidates repeat their last one, which leaves minima and maxima intact.
impl LevelSource for KernelFamily {
    fn n_levels(&self) -> usize {
        self.max_count
    }

    fn level_values_into(&self, pair: usize, values: &[f64], out: &mut [f64]) {
        let rows = &self.candidates[pair];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = row_expectation(&rows[k.min(rows.len() - 1)], values);
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Kernels,
    Densities,
    PairDensities,
    Uncertainty,
}

fn parse_err(line: usize, message: impl Into<String>) -> LagrangianError {
    LagrangianError::Parse {
        line,
        message: message.into(),
    }
}

fn number(token: &str, line: usize) -> Result<f64, LagrangianError> {
    token
        .parse()
        .map_err(|_| parse_err(line, format!("'{token}' is not a number")))
}

fn index(token: &str, line: usize) -> Result<usize, LagrangianError> {
    token
        .parse()
        .map_err(|_| parse_err(line, format!("'{token}' is not an index")))
}

fn pair_of(tokens: &[&str], line: usize, cmdp: &TabularCmdp) -> Result<usize, LagrangianError> {
    if tokens.len() < 2 {
        return Err(parse_err(line, "expected 'state action ...'"));
    }
    let s = index(tokens[0], line)?;
    let a = index(tokens[1], line)?;
    if s >= cmdp.n_states() || a >= cmdp.n_actions() {
        return Err(parse_err(line, format!("pair ({s}, {a}) out of range")));
    }
    Ok(cmdp.pair(s, a))
}

fn parse_row(tokens: &[&str], line: usize) -> Result<Vec<Transition>, LagrangianError> {
    tokens
        .iter()
        .map(|t| {
            let (j, p) = t
                .split_once(':')
                .ok_or_else(|| parse_err(line, format!("'{t}' is not 'successor:probability'")))?;
            Ok((index(j, line)?, number(p, line)?))
        })
        .collect()
}

/// Parses an equivalence instance for `cmdp`.
pub fn parse_instance(text: &str, cmdp: &TabularCmdp) -> Result<EquivalenceInstance, LagrangianError> {
    let n_pairs = cmdp.n_states() * cmdp.n_actions();
    let mut section = Section::None;
    let mut kernels: Vec<Vec<Vec<Transition>>> = vec![Vec::new(); n_pairs];
    let mut uncertainty: Vec<Vec<Vec<Transition>>> = vec![Vec::new(); n_pairs];
    let mut has_uncertainty = false;
    let mut global: Option<Vec<f64>> = None;
    let mut per_pair: Vec<Option<Vec<f64>>> = vec![None; n_pairs];
    let mut has_per_pair = false;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let header = match content {
            "KERNELS" => Some(Section::Kernels),
            "DENSITIES" => Some(Section::Densities),
            "PAIR_DENSITIES" => Some(Section::PairDensities),
            "UNCERTAINTY" => Some(Section::Uncertainty),
            _ => None,
        };
        if let Some(h) = header {
            has_uncertainty |= h == Section::Uncertainty;
            has_per_pair |= h == Section::PairDensities;
            section = h;
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        match section {
            Section::None => return Err(parse_err(line, "data before the first section header")),
            Section::Kernels | Section::Uncertainty => {
                let pair = pair_of(&tokens, line, cmdp)?;
                let row = parse_row(&tokens[2..], line)?;
                if section == Section::Kernels {
                    kernels[pair].push(row);
                } else {
                    uncertainty[pair].push(row);
                }
            }
            Section::Densities => {
                if global.is_some() {
                    return Err(parse_err(line, "DENSITIES must be a single line"));
                }
                global = Some(tokens.iter().map(|t| number(t, line)).collect::<Result<_, _>>()?);
            }
            Section::PairDensities => {
                let pair = pair_of(&tokens, line, cmdp)?;
                if per_pair[pair].is_some() {
                    return Err(parse_err(line, "duplicate densities for a pair"));
                }
                per_pair[pair] = Some(tokens[2..].iter().map(|t| number(t, line)).collect::<Result<_, _>>()?);
            }
        }
    }

    let last = text.lines().count().max(1);
    let densities = match (global, has_per_pair) {
        (Some(g), false) => DensitySpec::Global(g),
        (None, true) => DensitySpec::PerPair(
            per_pair
                .into_iter()
                .enumerate()
                .map(|(p, d)| {
                    d.ok_or_else(|| {
                        parse_err(
                            last,
                            format!(
                                "missing densities for ({}, {})",
                                p / cmdp.n_actions(),
                                p % cmdp.n_actions()
                            ),
                        )
                    })
                })
                .collect::<Result<_, _>>()?,
        ),
        (Some(_), true) => return Err(parse_err(last, "give either DENSITIES or PAIR_DENSITIES, not both")),
        (None, false) => return Err(parse_err(last, "missing DENSITIES")),
    };
    let kernels = KernelFamily::new(cmdp.n_states(), cmdp.n_actions(), kernels)?;
    let uncertainty = if has_uncertainty {
        Some(KernelFamily::new(cmdp.n_states(), cmdp.n_actions(), uncertainty)?)
    } else {
        None
    };
    Ok(EquivalenceInstance {
        kernels,
        densities,
        uncertainty,
    })
}

pub fn load_instance(path: impl AsRef<Path>, cmdp: &TabularCmdp) -> Result<EquivalenceInstance, LagrangianError> {
    parse_instance(&std::fs::read_to_string(path)?, cmdp)
}

fn write_family(out: &mut String, name: &str, family: &KernelFamily) {
    let _ = writeln!(out, "{name}");
    for (pair, rows) in family.candidates.iter().enumerate() {
        for row in rows {
            let _ = write!(out, "{} {}", pair / family.n_actions, pair % family.n_actions);
            for &(j, p) in row {
                let _ = write!(out, " {j}:{p:?}");
            }
            out.push('\n');
        }
    }
}

pub fn write_instance_string(instance: &EquivalenceInstance) -> String {
    let mut out = String::new();
    write_family(&mut out, "KERNELS", &instance.kernels);
    match &instance.densities {
        DensitySpec::Global(g) => {
            out.push_str("DENSITIES\n");
            let g: Vec<String> = g.iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&g.join(" "));
            out.push('\n');
        }
        DensitySpec::PerPair(rows) => {
            out.push_str("PAIR_DENSITIES\n");
            let n_actions = instance.kernels.n_actions;
            for (pair, g) in rows.iter().enumerate() {
                let _ = write!(out, "{} {}", pair / n_actions, pair % n_actions);
                for x in g {
                    let _ = write!(out, " {x:?}");
                }
                out.push('\n');
            }
        }
    }
    if let Some(u) = &instance.uncertainty {
        write_family(&mut out, "UNCERTAINTY", u);
    }
    out
}
