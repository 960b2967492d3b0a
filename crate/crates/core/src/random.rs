//! Random instances for property tests, acceptance checks and benches.

use rand::seq::index::sample;
use rand::Rng;

use crate::cmdp::{CmdpParts, TabularCmdp, Transition};
use crate::lagrangian::{DensitySpec, EquivalenceInstance, KernelFamily};
use crate::measure::FuzzyMeasure;

/// Densities in `[lo, hi)`.
pub fn densities<R: Rng + ?Sized>(rng: &mut R, k: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(lo..hi)).collect()
}

/// A measure with `λ ≥ 0`: densities are rescaled so that `Σ g < 1`.
pub fn convex_measure<R: Rng + ?Sized>(rng: &mut R, k: usize) -> FuzzyMeasure {
    let raw = densities(rng, k, 0.05, 1.0);
    let total: f64 = raw.iter().sum();
    let target = rng.random_range(0.1..0.98);
    let g = raw.iter().map(|x| (x / total * target).max(1e-4)).collect();
    FuzzyMeasure::new(g).expect("densities are in range")
}

pub fn values<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// A random distribution over `support` distinct states.
pub fn row<R: Rng + ?Sized>(rng: &mut R, n_states: usize, support: usize) -> Vec<Transition> {
    let support = support.clamp(1, n_states);
    let mut idx = sample(rng, n_states, support).into_vec();
    idx.sort_unstable();
    let weights: Vec<f64> = (0..support).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    idx.into_iter().zip(weights).map(|(j, w)| (j, w / total)).collect()
}

/// A CMDP with sparse random rows, rewards in `[-1, 1]` and costs in `[0, 1]`.
pub fn cmdp<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64, support: usize) -> TabularCmdp {
    let n_pairs = n_states * n_actions;
    let transitions = (0..n_pairs).map(|_| row(rng, n_states, support)).collect();
    let reward = (0..n_pairs).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cost = (0..n_pairs).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut d0 = vec![0.0; n_states];
    d0[rng.random_range(0..n_states)] = 1.0;
    TabularCmdp::try_from(CmdpParts {
        n_states,
        n_actions,
        transitions,
        reward,
        cost,
        gamma,
        d0,
        budget: f64::INFINITY,
    })
    .expect("generated tables are valid")
}

/// An equivalence instance whose uncertainty set is the core mixture rows
/// plus `extra` random convex combinations of them per pair.
pub fn equivalence_instance<R: Rng + ?Sized>(
    rng: &mut R,
    cmdp: &TabularCmdp,
    kernels_per_pair: usize,
    extra: usize,
) -> EquivalenceInstance {
    let n = cmdp.n_states();
    let n_pairs = n * cmdp.n_actions();
    let candidates: Vec<Vec<Vec<Transition>>> = (0..n_pairs)
        .map(|_| (0..kernels_per_pair).map(|_| row(rng, n, n.min(3))).collect())
        .collect();
    let kernels = KernelFamily::new(n, cmdp.n_actions(), candidates).expect("rows are stochastic");
    let measure = convex_measure(rng, kernels_per_pair);
    let mut sets = Vec::with_capacity(n_pairs);
    for pair in 0..n_pairs {
        let mut rows =
            crate::lagrangian::core_mixture_rows(kernels.candidates(pair), &measure, n).expect("measure is convex");
        let vertices = rows.clone();
        for _ in 0..extra {
            let w: Vec<f64> = (0..vertices.len()).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = w.iter().sum();
            let mut dense = vec![0.0; n];
            for (wi, v) in w.iter().zip(&vertices) {
                for &(j, p) in v {
                    dense[j] += wi / total * p;
                }
            }
            rows.push(dense.into_iter().enumerate().filter(|e| e.1 != 0.0).collect());
        }
        sets.push(rows);
    }
    EquivalenceInstance {
        kernels,
        densities: DensitySpec::Global(measure.densities().to_vec()),
        uncertainty: Some(KernelFamily::new(n, cmdp.n_actions(), sets).expect("mixtures are stochastic")),
    }
}
