//! Stratified Gaussian perturbation levels and per-level value aggregation.
//!
//! Level `k` (1-based) perturbs a state with isotropic noise of scale
//! `eps_k = eps_base · k`, drawing `M` samples per level. Draws come from
//! counter-based ChaCha streams addressed by `(seed, stream_id, level)`, so
//! the samples for a given state-action pair do not depend on evaluation
//! order or thread placement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::cmdp::{StateVector, TabularCmdp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UncertaintyError {
    #[error("level count must be at least 1")]
    NoLevels,
    #[error("samples per level must be at least 1")]
    NoSamples,
    #[error("base scale must be finite and >= 0, got {0}")]
    InvalidScale(f64),
}

/// Word offset between consecutive levels of one stream.
const LEVEL_STRIDE: u128 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyLevels {
    k: usize,
    eps_base: f64,
    samples: usize,
    seed: u64,
}

impl UncertaintyLevels {
    pub fn new(k: usize, eps_base: f64, samples: usize, seed: u64) -> Result<Self, UncertaintyError> {
        if k == 0 {
            return Err(UncertaintyError::NoLevels);
        }
        if samples == 0 {
            return Err(UncertaintyError::NoSamples);
        }
        if !(eps_base >= 0.0 && eps_base.is_finite()) {
            return Err(UncertaintyError::InvalidScale(eps_base));
        }
        Ok(UncertaintyLevels {
            k,
            eps_base,
            samples,
            seed,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn eps_base(&self) -> f64 {
        self.eps_base
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Scale of level `level` (0-based): `eps_base · (level + 1)`.
    pub fn eps(&self, level: usize) -> f64 {
        self.eps_base * (level + 1) as f64
    }

    pub fn scales(&self) -> Vec<f64> {
        (0..self.k).map(|l| self.eps(l)).collect()
    }

    /// Generator positioned at the start of `(stream_id, level)`.
    pub fn stream(&self, stream_id: u64, level: usize) -> ChaCha8Rng {
        counter_stream(self.seed, stream_id, level as u128 * LEVEL_STRIDE)
    }
}

/// ChaCha8 generator keyed by `seed`, on stream `stream_id`, at word `offset`.
pub fn counter_stream(seed: u64, stream_id: u64, offset: u128) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng.set_word_pos(offset);
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `K × M` perturbed copies of `s`; row `k` uses scale `eps_{k+1}`.
pub fn sample_perturbed(s: StateVector, levels: &UncertaintyLevels, stream_id: u64) -> Vec<Vec<StateVector>> {
    (0..levels.k())
        .map(|level| {
            let eps = levels.eps(level);
            let mut rng = levels.stream(stream_id, level);
            (0..levels.samples())
                .map(|_| {
                    let nx = standard_normal(&mut rng);
                    let nv = standard_normal(&mut rng);
                    StateVector::new(s.x + eps * nx, s.v + eps * nv)
                })
                .collect()
        })
        .collect()
}

/// `V̄_k = (1/M) Σ_j V(snap(s̃_{k,j}))` for every level.
pub fn level_values(
    values: &[f64],
    s: StateVector,
    levels: &UncertaintyLevels,
    snap: impl Fn(StateVector) -> usize,
    stream_id: u64,
) -> Vec<f64> {
    sample_perturbed(s, levels, stream_id)
        .into_iter()
        .map(|row| row.iter().map(|&p| values[snap(p)]).sum::<f64>() / levels.samples() as f64)
        .collect()
}

/// Supplies `K` aggregated next-state values for a state-action pair.
///
/// `pair` is `state * n_actions + action`; `out` has length
/// [`n_levels`](Self::n_levels).
pub trait LevelSource: Sync {
    fn n_levels(&self) -> usize;
    fn level_values_into(&self, pair: usize, values: &[f64], out: &mut [f64]);
}

/// Precomputed sparse weights `V̄_k(s, a) = Σ w · V(index)`.
///
/// The perturbation draws are made once, so repeated backups see the same
/// samples and each level value is a fixed linear functional of `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTable {
    k: usize,
    n_pairs: usize,
    /// Start of each `(pair, level)` slice in `entries`; length `n_pairs·k + 1`.
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

impl LevelTable {
    fn builder(k: usize, n_pairs: usize) -> Self {
        LevelTable {
            k,
            n_pairs,
            offsets: vec![0],
            entries: Vec::new(),
        }
    }

    /// Appends one level slice, merging repeated indices with exact weights.
    fn push_counts(&mut self, indices: &[usize], base_weight: f64, samples: usize) {
        let mut counts: Vec<(usize, usize)> = Vec::with_capacity(indices.len());
        for &i in indices {
            match counts.iter_mut().find(|(j, _)| *j == i) {
                Some((_, c)) => *c += 1,
                None => counts.push((i, 1)),
            }
        }
        for (i, c) in counts {
            self.entries
                .push((i as u32, base_weight * (c as f64 / samples as f64)));
        }
    }

    fn close_level(&mut self) {
        self.offsets.push(self.entries.len());
    }

    /// Perturbs the continuous successor of every pair and snaps the samples.
    ///
    /// `successors[pair]` is the nominal pre-snap successor; the stream id of
    /// each pair is its index.
    pub fn from_successors(
        successors: &[StateVector],
        levels: &UncertaintyLevels,
        snap: impl Fn(StateVector) -> usize,
    ) -> Self {
        let mut table = LevelTable::builder(levels.k(), successors.len());
        let mut indices = Vec::with_capacity(levels.samples());
        for (pair, &succ) in successors.iter().enumerate() {
            for (level, row) in sample_perturbed(succ, levels, pair as u64).into_iter().enumerate() {
                debug_assert!(level < levels.k());
                indices.clear();
                indices.extend(row.into_iter().map(&snap));
                table.push_counts(&indices, 1.0, levels.samples());
                table.close_level();
            }
        }
        table
    }

    /// Perturbs successor indices along the state-index line.
    ///
    /// For a CMDP without continuous geometry, each successor `j` of a
    /// nominal row is displaced to `round(j + eps_k · n)`, clipped to the
    /// state range, keeping its row probability.
    pub fn from_index_line(cmdp: &TabularCmdp, levels: &UncertaintyLevels) -> Self {
        let n_states = cmdp.n_states();
        let n_pairs = n_states * cmdp.n_actions();
        let mut table = LevelTable::builder(levels.k(), n_pairs);
        let mut indices = Vec::with_capacity(levels.samples());
        let max_index = (n_states - 1) as f64;
        for s in 0..n_states {
            for a in 0..cmdp.n_actions() {
                let pair = cmdp.pair(s, a);
                for level in 0..levels.k() {
                    let eps = levels.eps(level);
                    let mut rng = levels.stream(pair as u64, level);
                    for &(j, p) in cmdp.row(s, a) {
                        indices.clear();
                        for _ in 0..levels.samples() {
                            let n = standard_normal(&mut rng);
                            let moved = (j as f64 + eps * n).round().clamp(0.0, max_index);
                            indices.push(moved as usize);
                        }
                        table.push_counts(&indices, p, levels.samples());
                    }
                    table.close_level();
                }
            }
        }
        table
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn level_entries(&self, pair: usize, level: usize) -> &[(u32, f64)] {
        let idx = pair * self.k + level;
        &self.entries[self.offsets[idx]..self.offsets[idx + 1]]
    }
}

impl LevelSource for LevelTable {
    fn n_levels(&self) -> usize {
        self.k
    }

    #[inline]
    fn level_values_into(&self, pair: usize, values: &[f64], out: &mut [f64]) {
        for (level, slot) in out.iter_mut().enumerate() {
            *slot = self
                .level_entries(pair, level)
                .iter()
                .map(|&(i, w)| w * values[i as usize])
                .sum();
        }
    }
}
