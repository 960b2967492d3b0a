//! Discrete Choquet integration against λ-fuzzy measures.
//!
//! Values are sorted in descending order (stable, ties by ascending level
//! index) and weighted by the capacity increments of the nested head sets:
//!
//! ```text
//! (C)∫ f dm = Σ_i f_(i) · [m({(1), …, (i)}) - m({(1), …, (i-1)})]
//! ```
//!
//! For a convex measure (`λ ≥ 0`) this equals the smallest expectation of
//! `f` over the core of `m`; integrating against the dual capacity gives the
//! largest one. [`min_over_core`] and [`max_over_core`] compute both extrema
//! by brute-force enumeration of marginal vectors and serve as oracles.

use thiserror::Error;

use crate::measure::{FuzzyMeasure, MeasureError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChoquetError {
    #[error("expected {expected} level values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Which summation formula to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// Descending sort with head-set increments; the min-over-core integral.
    #[default]
    HeadSets,
    /// Descending sort with tail-set capacities `m({(i), …, (K)})` and
    /// weights `m_i - m_{i+1}`, exactly as the estimator is often written.
    /// Only for comparison; evaluates the dual integral on convex measures.
    TailSetsLiteral,
}

fn check_len(values: &[f64], m: &FuzzyMeasure) -> Result<(), ChoquetError> {
    if values.len() != m.k() {
        return Err(ChoquetError::LengthMismatch {
            expected: m.k(),
            actual: values.len(),
        });
    }
    Ok(())
}

/// Level indices sorted by value, descending, ties by ascending index.
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    sort_descending(values, &mut order);
    order
}

pub(crate) fn sort_descending(values: &[f64], order: &mut [usize]) {
    // Stable sort keeps ascending index among equal values.
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
}

/// `Σ_i f_(i) · (chain[i] - chain[i-1])` for values visited in `order`.
#[inline]
pub(crate) fn integrate_chain(values: &[f64], order: &[usize], chain: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut previous = 0.0;
    for (i, &level) in order.iter().enumerate() {
        total += values[level] * (chain[i] - previous);
        previous = chain[i];
    }
    total
}

#[inline]
fn constant(values: &[f64]) -> Option<f64> {
    let first = *values.first()?;
    values.iter().all(|&x| x == first).then_some(first)
}

/// Reusable buffers for integrating many value vectors of the same length.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    order: Vec<usize>,
    chain: Vec<f64>,
}

impl Workspace {
    pub fn new(k: usize) -> Self {
        Workspace {
            order: Vec::with_capacity(k),
            chain: vec![0.0; k],
        }
    }

    fn prepare(&mut self, values: &[f64]) {
        let k = values.len();
        self.order.clear();
        self.order.extend(0..k);
        self.chain.resize(k, 0.0);
        sort_descending(values, &mut self.order);
    }

    /// Standard integral; `values.len()` must equal `m.k()`.
    pub fn integrate(&mut self, values: &[f64], m: &FuzzyMeasure) -> f64 {
        debug_assert_eq!(values.len(), m.k());
        if let Some(c) = constant(values) {
            return c;
        }
        self.prepare(values);
        m.prefix_chain(&self.order, &mut self.chain);
        integrate_chain(values, &self.order, &self.chain)
    }

    /// Integral against the dual capacity; `values.len()` must equal `m.k()`.
    pub fn integrate_dual(&mut self, values: &[f64], m: &FuzzyMeasure) -> f64 {
        debug_assert_eq!(values.len(), m.k());
        if let Some(c) = constant(values) {
            return c;
        }
        self.prepare(values);
        m.dual_prefix_chain(&self.order, &mut self.chain);
        integrate_chain(values, &self.order, &self.chain)
    }
}

pub fn choquet_integral(values: &[f64], m: &FuzzyMeasure) -> Result<f64, ChoquetError> {
    check_len(values, m)?;
    Ok(Workspace::new(m.k()).integrate(values, m))
}

/// Integral of `values` against the dual capacity `m'(A) = 1 - m(Ω \ A)`.
pub fn dual_choquet_integral(values: &[f64], m: &FuzzyMeasure) -> Result<f64, ChoquetError> {
    check_len(values, m)?;
    Ok(Workspace::new(m.k()).integrate_dual(values, m))
}

/// Evaluates the standard integral under the chosen summation convention.
pub fn choquet_with_convention(
    values: &[f64],
    m: &FuzzyMeasure,
    convention: Convention,
) -> Result<f64, ChoquetError> {
    match convention {
        Convention::HeadSets => choquet_integral(values, m),
        Convention::TailSetsLiteral => {
            check_len(values, m)?;
            let order = descending_order(values);
            let k = order.len();
            // tail[i] = m({order[i], …, order[K-1]}), tail[K] = 0.
            let mut tail = vec![0.0; k + 1];
            let mut reversed: Vec<usize> = order.clone();
            reversed.reverse();
            let mut chain = vec![0.0; k];
            m.prefix_chain(&reversed, &mut chain);
            for i in 0..k {
                tail[i] = chain[k - 1 - i];
            }
            Ok((0..k).map(|i| values[order[i]] * (tail[i] - tail[i + 1])).sum())
        }
    }
}

/// Smallest expectation of `values` over the marginal vectors of `m`.
pub fn min_over_core(values: &[f64], m: &FuzzyMeasure) -> Result<f64, ChoquetError> {
    check_len(values, m)?;
    let core = m.core_extreme_points()?;
    Ok(core
        .iter()
        .map(|p| p.expectation(values))
        .fold(f64::INFINITY, f64::min))
}

/// Largest expectation of `values` over the marginal vectors of `m`.
pub fn max_over_core(values: &[f64], m: &FuzzyMeasure) -> Result<f64, ChoquetError> {
    check_len(values, m)?;
    let core = m.core_extreme_points()?;
    Ok(core
        .iter()
        .map(|p| p.expectation(values))
        .fold(f64::NEG_INFINITY, f64::max))
}
