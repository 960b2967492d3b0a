//! Line-oriented text format for tabular CMDPs.
//!
//! ```text
//! # comments start with '#'
//! META
//! states 2
//! actions 2
//! gamma 0.9
//! budget inf
//! P0
//! # state action successor:probability ...
//! 0 0 0:1.0
//! 0 1 0:0.5 1:0.5
//! R
//! # state reward(action 0) reward(action 1) ...
//! 0 1.0 2.0
//! C
//! 0 0.0 1.0
//! D0
//! 1.0 0.0
//! ```
//!
//! Every `(state, action)` pair needs exactly one `P0` line and every state
//! one `R` and `C` line. Numbers use `.` as the radix point.

use std::fmt::Write as _;
use std::path::Path;

use super::{CmdpError, CmdpParts, TabularCmdp};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Meta,
    P0,
    R,
    C,
    D0,
}

fn parse_err(line: usize, message: impl Into<String>) -> CmdpError {
    CmdpError::Parse {
        line,
        message: message.into(),
    }
}

fn number(token: &str, line: usize) -> Result<f64, CmdpError> {
    token
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("'{token}' is not a number")))
}

fn index(token: &str, line: usize) -> Result<usize, CmdpError> {
    token
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("'{token}' is not an index")))
}

/// Parses the text format into raw tables without checking invariants.
pub fn parse_parts(text: &str) -> Result<CmdpParts, CmdpError> {
    let mut section = Section::None;
    let mut n_states: Option<usize> = None;
    let mut n_actions: Option<usize> = None;
    let mut gamma: Option<f64> = None;
    let mut budget = f64::INFINITY;
    let mut rows: Vec<Option<Vec<(usize, f64)>>> = Vec::new();
    let mut reward: Vec<Option<Vec<f64>>> = Vec::new();
    let mut cost: Vec<Option<Vec<f64>>> = Vec::new();
    let mut d0: Option<Vec<f64>> = None;

    let dims = |n_states: Option<usize>, n_actions: Option<usize>, line: usize| {
        match (n_states, n_actions) {
            (Some(s), Some(a)) => Ok((s, a)),
            _ => Err(parse_err(line, "META must declare states and actions first")),
        }
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let header = match content {
            "META" => Some(Section::Meta),
            "P0" => Some(Section::P0),
            "R" => Some(Section::R),
            "C" => Some(Section::C),
            "D0" => Some(Section::D0),
            _ => None,
        };
        if let Some(h) = header {
            if h != Section::Meta {
                let (s, a) = dims(n_states, n_actions, line)?;
                if rows.is_empty() {
                    rows = vec![None; s * a];
                    reward = vec![None; s];
                    cost = vec![None; s];
                }
            }
            section = h;
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        match section {
            Section::None => return Err(parse_err(line, "data before the first section header")),
            Section::Meta => {
                if tokens.len() != 2 {
                    return Err(parse_err(line, "expected 'key value'"));
                }
                match tokens[0] {
                    "states" => n_states = Some(index(tokens[1], line)?),
                    "actions" => n_actions = Some(index(tokens[1], line)?),
                    "gamma" => gamma = Some(number(tokens[1], line)?),
                    "budget" => budget = number(tokens[1], line)?,
                    other => return Err(parse_err(line, format!("unknown META key '{other}'"))),
                }
            }
            Section::P0 => {
                let (s_count, a_count) = dims(n_states, n_actions, line)?;
                if tokens.len() < 2 {
                    return Err(parse_err(line, "expected 'state action successor:probability ...'"));
                }
                let s = index(tokens[0], line)?;
                let a = index(tokens[1], line)?;
                if s >= s_count || a >= a_count {
                    return Err(parse_err(line, format!("pair ({s}, {a}) out of range")));
                }
                let mut row = Vec::with_capacity(tokens.len() - 2);
                for t in &tokens[2..] {
                    let (j, p) = t
                        .split_once(':')
                        .ok_or_else(|| parse_err(line, format!("'{t}' is not 'successor:probability'")))?;
                    row.push((index(j, line)?, number(p, line)?));
                }
                let slot = &mut rows[s * a_count + a];
                if slot.is_some() {
                    return Err(parse_err(line, format!("duplicate row for ({s}, {a})")));
                }
                *slot = Some(row);
            }
            Section::R | Section::C => {
                let (s_count, a_count) = dims(n_states, n_actions, line)?;
                if tokens.len() != a_count + 1 {
                    return Err(parse_err(line, format!("expected state followed by {a_count} values")));
                }
                let s = index(tokens[0], line)?;
                if s >= s_count {
                    return Err(parse_err(line, format!("state {s} out of range")));
                }
                let values = tokens[1..]
                    .iter()
                    .map(|t| number(t, line))
                    .collect::<Result<Vec<_>, _>>()?;
                let table = if section == Section::R { &mut reward } else { &mut cost };
                if table[s].is_some() {
                    return Err(parse_err(line, format!("duplicate line for state {s}")));
                }
                table[s] = Some(values);
            }
            Section::D0 => {
                if d0.is_some() {
                    return Err(parse_err(line, "D0 must be a single line"));
                }
                d0 = Some(tokens.iter().map(|t| number(t, line)).collect::<Result<_, _>>()?);
            }
        }
    }

    let last = text.lines().count().max(1);
    let (n_states, n_actions) = dims(n_states, n_actions, last)?;
    let gamma = gamma.ok_or_else(|| parse_err(last, "META is missing gamma"))?;
    let mut transitions = Vec::with_capacity(rows.len());
    for (idx, row) in rows.into_iter().enumerate() {
        transitions.push(row.ok_or_else(|| {
            parse_err(last, format!("missing P0 row for ({}, {})", idx / n_actions, idx % n_actions))
        })?);
    }
    let flatten = |table: Vec<Option<Vec<f64>>>, name: &str| -> Result<Vec<f64>, CmdpError> {
        let mut out = Vec::with_capacity(n_states * n_actions);
        for (s, values) in table.into_iter().enumerate() {
            out.extend(values.ok_or_else(|| parse_err(last, format!("missing {name} line for state {s}")))?);
        }
        Ok(out)
    };
    Ok(CmdpParts {
        n_states,
        n_actions,
        transitions,
        reward: flatten(reward, "R")?,
        cost: flatten(cost, "C")?,
        gamma,
        d0: d0.ok_or_else(|| parse_err(last, "missing D0"))?,
        budget,
    })
}

/// Parses and validates.
pub fn parse_cmdp(text: &str) -> Result<TabularCmdp, CmdpError> {
    TabularCmdp::try_from(parse_parts(text)?)
}

pub fn load_cmdp(path: impl AsRef<Path>) -> Result<TabularCmdp, CmdpError> {
    parse_cmdp(&std::fs::read_to_string(path)?)
}

/// Canonical text form; numbers use the shortest round-trip representation.
pub fn write_cmdp_string(cmdp: &TabularCmdp) -> String {
    let p = cmdp.parts();
    let mut out = String::new();
    out.push_str("META\n");
    let _ = writeln!(out, "states {}", p.n_states);
    let _ = writeln!(out, "actions {}", p.n_actions);
    let _ = writeln!(out, "gamma {:?}", p.gamma);
    let _ = writeln!(out, "budget {:?}", p.budget);
    out.push_str("P0\n");
    for s in 0..p.n_states {
        for a in 0..p.n_actions {
            let _ = write!(out, "{s} {a}");
            for &(j, prob) in cmdp.row(s, a) {
                let _ = write!(out, " {j}:{prob:?}");
            }
            out.push('\n');
        }
    }
    for (name, table) in [("R", &p.reward), ("C", &p.cost)] {
        let _ = writeln!(out, "{name}");
        for s in 0..p.n_states {
            let _ = write!(out, "{s}");
            for a in 0..p.n_actions {
                let _ = write!(out, " {:?}", table[s * p.n_actions + a]);
            }
            out.push('\n');
        }
    }
    out.push_str("D0\n");
    let d0: Vec<String> = p.d0.iter().map(|x| format!("{x:?}")).collect();
    out.push_str(&d0.join(" "));
    out.push('\n');
    out
}

pub fn write_cmdp(cmdp: &TabularCmdp, path: impl AsRef<Path>) -> Result<(), CmdpError> {
    std::fs::write(path, write_cmdp_string(cmdp))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = "\
# two-state example
META
states 2
actions 2
gamma 0.9
budget 1.5
P0
0 0 0:1
0 1 1:1
1 0 0:0.5 1:0.5   # mixed
1 1 1:1
R
0 0 1
1 2 0.5
C
0 0 1
1 1 0
D0
1 0
";

    #[test]
    fn loads_valid_file() {
        let m = parse_cmdp(VALID).unwrap();
        assert_eq!(m.n_states(), 2);
        assert_eq!(m.budget(), 1.5);
        assert_eq!(m.row(1, 0), &[(0, 0.5), (1, 0.5)]);
        assert_eq!(m.reward(1, 1), 0.5);
    }

    #[test]
    fn write_then_parse_is_identity() {
        let m = parse_cmdp(VALID).unwrap();
        let text = write_cmdp_string(&m);
        let again = parse_cmdp(&text).unwrap();
        assert_eq!(m, again);
        assert_eq!(write_cmdp_string(&again), text);
    }

    #[test]
    fn bad_row_reports_invariant() {
        let text = VALID.replace("1 1 1:1\nR", "1 1 1:0.9\nR");
        match parse_cmdp(&text) {
            Err(CmdpError::InvariantViolation(r)) => {
                assert!(r.violations[0].location.contains("state 1, action 1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gamma_one_reports_gamma() {
        let text = VALID.replace("gamma 0.9", "gamma 1.0");
        match parse_cmdp(&text) {
            Err(CmdpError::InvariantViolation(r)) => assert_eq!(r.violations[0].location, "gamma"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = VALID.replace("0 0 1\n1 2 0.5", "0 0 x\n1 2 0.5");
        match parse_cmdp(&text) {
            Err(CmdpError::Parse { line, .. }) => assert_eq!(line, 13),
            other => panic!("unexpected {other:?}"),
        }
        let text = VALID.replace("0 1 1:1", "0 1 1-1");
        assert!(matches!(parse_cmdp(&text), Err(CmdpError::Parse { line: 9, .. })));
    }

    #[test]
    fn missing_rows_are_reported() {
        let text = VALID.replace("0 1 1:1\n", "");
        assert!(matches!(parse_cmdp(&text), Err(CmdpError::Parse { .. })));
    }
}
