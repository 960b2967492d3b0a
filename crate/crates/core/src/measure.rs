//! Sugeno λ-fuzzy measures over a finite set of uncertainty levels.
//!
//! A measure is fully determined by its singleton densities `g_k` and the
//! interaction parameter `λ > -1`, which is fixed by the characteristic
//! equation `∏ (1 + λ g_k) = 1 + λ`. Subsets are evaluated with the λ-rule
//!
//! ```text
//! m(A) = (∏_{k ∈ A} (1 + λ g_k) - 1) / λ
//! ```
//!
//! which reduces to `Σ_{k ∈ A} g_k` as `λ → 0`. Products are accumulated in
//! log space (`ln_1p` / `exp_m1`) so that tiny and very large `λ` keep full
//! relative precision.

use itertools::Itertools;
use thiserror::Error;

/// `|λ|` below this is treated as the additive limit.
pub const LAMBDA_ZERO_TOL: f64 = 1e-12;
/// Densities summing to 1 within this tolerance yield `λ = 0` exactly.
pub const ADDITIVE_SUM_TOL: f64 = 1e-12;
/// Relative characteristic-equation tolerance accepted by [`solve_lambda`].
pub const CHARACTERISTIC_TOL: f64 = 1e-10;
/// Refinement iteration cap for [`solve_lambda`].
pub const MAX_SOLVER_ITERS: usize = 100;
/// Largest level count for which core extreme points are enumerated.
pub const MAX_CORE_LEVELS: usize = 8;
/// Largest level count a [`SubsetMask`] can address.
pub const MAX_LEVELS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("density g[{index}] = {value} is outside (0, 1)")]
    DensityOutOfRange { index: usize, value: f64 },
    #[error("at least one density is required")]
    Empty,
    #[error("{count} levels exceed the supported maximum of {MAX_LEVELS}")]
    TooManyLevels { count: usize },
    #[error("characteristic equation not solved after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("subset mask {mask:#b} references levels beyond K = {k}")]
    InvalidSubset { mask: u64, k: usize },
    #[error("measure is not convex (λ = {lambda}); the core has no marginal-vector description")]
    NotConvex { lambda: f64 },
    #[error("core enumeration over K = {k} levels exceeds the limit of {MAX_CORE_LEVELS}")]
    TooLarge { k: usize },
}

/// A subset of level indices `0..K`, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SubsetMask(u64);

impl SubsetMask {
    pub const EMPTY: SubsetMask = SubsetMask(0);

    pub fn from_bits(bits: u64) -> Self {
        SubsetMask(bits)
    }

    pub fn full(k: usize) -> Self {
        debug_assert!(k <= MAX_LEVELS);
        if k == MAX_LEVELS {
            SubsetMask(u64::MAX)
        } else {
            SubsetMask((1u64 << k) - 1)
        }
    }

    pub fn singleton(index: usize) -> Self {
        SubsetMask(1u64 << index)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        SubsetMask(indices.into_iter().fold(0, |acc, i| acc | (1u64 << i)))
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, index: usize) -> bool {
        index < MAX_LEVELS && self.0 & (1u64 << index) != 0
    }

    pub fn union(self, other: SubsetMask) -> Self {
        SubsetMask(self.0 | other.0)
    }

    pub fn intersection(self, other: SubsetMask) -> Self {
        SubsetMask(self.0 & other.0)
    }

    pub fn is_subset_of(self, other: SubsetMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: SubsetMask) -> bool {
        self.0 & other.0 == 0
    }

    /// Complement relative to `0..k`.
    pub fn complement(self, k: usize) -> Self {
        SubsetMask(!self.0 & SubsetMask::full(k).0)
    }

    pub fn is_valid_for(self, k: usize) -> bool {
        self.0 & !SubsetMask::full(k).0 == 0
    }

    pub fn indices(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..MAX_LEVELS).filter(move |&i| bits & (1u64 << i) != 0)
    }

    /// All subsets of `0..k` in increasing bitmask order.
    pub fn all(k: usize) -> impl Iterator<Item = SubsetMask> {
        assert!(k < MAX_LEVELS, "cannot enumerate 2^{k} subsets");
        (0..(1u64 << k)).map(SubsetMask)
    }
}

/// Solves the characteristic equation `∏ (1 + λ g_k) = 1 + λ` for `λ > -1`.
///
/// The root is searched on the side indicated by `sign(1 - Σ g)`. For
/// `λ > 0` an upper bracket is doubled until the residual changes sign; for
/// `λ < 0` the bracket is `(-1, 0)`, parameterised by `u = 1 + λ` so that
/// roots very close to `-1` keep relative precision. Within the bracket,
/// Newton steps on `φ(λ) = Σ ln(1 + λ g_k) - ln(1 + λ)` are taken and a step
/// leaving the bracket falls back to bisection.
pub fn solve_lambda(densities: &[f64]) -> Result<f64, MeasureError> {
    validate_densities(densities)?;
    if densities.len() == 1 {
        // (1 + λ g) = 1 + λ only admits λ = 0 for g < 1.
        return Ok(0.0);
    }
    let sum: f64 = densities.iter().sum();
    if (sum - 1.0).abs() <= ADDITIVE_SUM_TOL {
        return Ok(0.0);
    }
    let lambda = if sum < 1.0 {
        solve_positive(densities)?
    } else {
        solve_negative(densities)?
    };
    let residual = characteristic_residual(densities, lambda);
    if residual.abs() > CHARACTERISTIC_TOL * (1.0 + lambda.abs()) {
        return Err(MeasureError::NoConvergence {
            iterations: MAX_SOLVER_ITERS,
            residual,
        });
    }
    Ok(lambda)
}

/// `∏ (1 + λ g_k) - (1 + λ)`, evaluated directly.
pub fn characteristic_residual(densities: &[f64], lambda: f64) -> f64 {
    densities.iter().map(|g| 1.0 + lambda * g).product::<f64>() - (1.0 + lambda)
}

fn validate_densities(densities: &[f64]) -> Result<(), MeasureError> {
    if densities.is_empty() {
        return Err(MeasureError::Empty);
    }
    if densities.len() > MAX_LEVELS {
        return Err(MeasureError::TooManyLevels {
            count: densities.len(),
        });
    }
    for (index, &value) in densities.iter().enumerate() {
        if !(value > 0.0 && value < 1.0) {
            return Err(MeasureError::DensityOutOfRange { index, value });
        }
    }
    Ok(())
}

fn solve_positive(g: &[f64]) -> Result<f64, MeasureError> {
    let phi = |l: f64| g.iter().map(|&gk| (l * gk).ln_1p()).sum::<f64>() - l.ln_1p();
    let dphi = |l: f64| g.iter().map(|&gk| gk / (1.0 + l * gk)).sum::<f64>() - 1.0 / (1.0 + l);

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while phi(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(MeasureError::NoConvergence {
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
    }
    // Newton from the upper end: φ is convex in λ there, so iterates stay put.
    newton_bisect(phi, dphi, lo, hi, hi)
}

fn solve_negative(g: &[f64]) -> Result<f64, MeasureError> {
    // u = 1 + λ ∈ (0, 1); ψ(u) = Σ ln((1 - g) + u g) - ln u.
    let psi = |u: f64| {
        g.iter()
            .map(|&gk| ((1.0 - gk) + u * gk).ln())
            .sum::<f64>()
            - u.ln()
    };
    let dpsi = |u: f64| g.iter().map(|&gk| gk / ((1.0 - gk) + u * gk)).sum::<f64>() - 1.0 / u;

    // ψ → +∞ as u → 0⁺ and ψ < 0 just below u = 1; shrink until positive.
    let mut lo = 0.5_f64;
    let mut hi = 1.0_f64;
    while psi(lo) <= 0.0 {
        hi = lo;
        lo *= 0.5;
        if lo < f64::MIN_POSITIVE {
            break;
        }
    }
    let u = newton_bisect(psi, dpsi, lo, hi, 0.5 * (lo + hi))?;
    let lambda = u - 1.0;
    // Roots closer to -1 than one ulp round onto the boundary.
    Ok(if lambda <= -1.0 { next_up(-1.0) } else { lambda })
}

/// Safeguarded Newton iteration for a root of `f` on `[lo, hi]`, where the
/// sign of `f` differs at the two ends.
fn newton_bisect(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    start: f64,
) -> Result<f64, MeasureError> {
    let f_lo_positive = f(lo) > 0.0;
    let mut x = start;
    for _ in 0..MAX_SOLVER_ITERS {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if (fx > 0.0) == f_lo_positive {
            lo = x;
        } else {
            hi = x;
        }
        let slope = df(x);
        let newton = x - fx / slope;
        let next = if slope.is_finite() && slope != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE)
            || (hi - lo) <= 4.0 * f64::EPSILON * hi.abs()
        {
            return Ok(next);
        }
        x = next;
    }
    Err(MeasureError::NoConvergence {
        iterations: MAX_SOLVER_ITERS,
        residual: f(x),
    })
}

fn next_up(x: f64) -> f64 {
    // x is negative here, so stepping towards zero means decrementing bits.
    debug_assert!(x < 0.0);
    f64::from_bits(x.to_bits() - 1)
}

/// A normalised λ-fuzzy measure on `K` uncertainty levels.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyMeasure {
    densities: Vec<f64>,
    lambda: f64,
}

impl FuzzyMeasure {
    /// Builds a measure from densities, solving for `λ`.
    pub fn new(densities: Vec<f64>) -> Result<Self, MeasureError> {
        let lambda = solve_lambda(&densities)?;
        Ok(FuzzyMeasure { densities, lambda })
    }

    /// The additive measure placing mass `1/K` on every level.
    pub fn uniform(k: usize) -> Self {
        assert!(k >= 1 && k <= MAX_LEVELS);
        if k == 1 {
            // g must lie strictly inside (0, 1); K = 1 normalises through the
            // full-set rule regardless of the density.
            return FuzzyMeasure {
                densities: vec![0.5],
                lambda: 0.0,
            };
        }
        FuzzyMeasure {
            densities: vec![1.0 / k as f64; k],
            lambda: 0.0,
        }
    }

    /// Uses `lambda` as given, without solving the characteristic equation.
    ///
    /// Intended for detached-gradient evaluation, where `λ` is frozen while
    /// the densities move.
    pub fn with_lambda(densities: Vec<f64>, lambda: f64) -> Self {
        FuzzyMeasure { densities, lambda }
    }

    pub fn k(&self) -> usize {
        self.densities.len()
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `λ ≥ 0`: super-modular, non-empty core of marginal vectors.
    pub fn is_convex(&self) -> bool {
        self.lambda >= 0.0
    }

    fn check_mask(&self, subset: SubsetMask) -> Result<(), MeasureError> {
        if subset.is_valid_for(self.k()) {
            Ok(())
        } else {
            Err(MeasureError::InvalidSubset {
                mask: subset.bits(),
                k: self.k(),
            })
        }
    }

    pub fn measure_of(&self, subset: SubsetMask) -> Result<f64, MeasureError> {
        self.check_mask(subset)?;
        Ok(self.measure_unchecked(subset))
    }

    pub fn dual_measure_of(&self, subset: SubsetMask) -> Result<f64, MeasureError> {
        self.check_mask(subset)?;
        Ok(1.0 - self.measure_unchecked(subset.complement(self.k())))
    }

    fn measure_unchecked(&self, subset: SubsetMask) -> f64 {
        let mut log_sum = 0.0;
        let mut density_sum = 0.0;
        let mut count = 0;
        for i in subset.indices() {
            let g = self.densities[i];
            log_sum += (self.lambda * g).ln_1p();
            density_sum += g;
            count += 1;
        }
        self.combine(log_sum, density_sum, count)
    }

    /// λ-rule value for a set described by its accumulated statistics.
    #[inline]
    fn combine(&self, log_sum: f64, density_sum: f64, count: usize) -> f64 {
        if count == 0 {
            return 0.0;
        }
        if count == self.k() {
            return 1.0;
        }
        if count == 1 {
            return density_sum;
        }
        let value = if self.lambda.abs() < LAMBDA_ZERO_TOL {
            density_sum
        } else {
            log_sum.exp_m1() / self.lambda
        };
        value.clamp(0.0, 1.0)
    }

    /// Measures of the nested sets `{order[0]}, {order[0], order[1]}, …`.
    ///
    /// `out[i]` receives the measure of the first `i + 1` levels of `order`;
    /// agrees with [`measure_of`](Self::measure_of) on each prefix.
    pub fn prefix_chain(&self, order: &[usize], out: &mut [f64]) {
        debug_assert_eq!(order.len(), out.len());
        let mut log_sum = 0.0;
        let mut density_sum = 0.0;
        for (i, &level) in order.iter().enumerate() {
            let g = self.densities[level];
            log_sum += (self.lambda * g).ln_1p();
            density_sum += g;
            out[i] = self.combine(log_sum, density_sum, i + 1);
        }
    }

    /// Dual measures `m'(prefix) = 1 - m(remaining levels)` along `order`.
    ///
    /// `order` must be a permutation of all levels.
    pub fn dual_prefix_chain(&self, order: &[usize], out: &mut [f64]) {
        let k = order.len();
        debug_assert_eq!(k, self.k());
        debug_assert_eq!(out.len(), k);
        // out[i] = 1 - m(order[i+1..]); accumulate suffix statistics backwards.
        let mut log_sum = 0.0;
        let mut density_sum = 0.0;
        out[k - 1] = 1.0;
        for i in (0..k - 1).rev() {
            let g = self.densities[order[i + 1]];
            log_sum += (self.lambda * g).ln_1p();
            density_sum += g;
            out[i] = 1.0 - self.combine(log_sum, density_sum, k - 1 - i);
        }
    }

    /// The dual capacity as a measure of its own: `m' = 1 - m(Ω \ ·)`.
    ///
    /// For a λ-measure the dual is again a λ-measure with densities
    /// `1 - m(Ω \ {k})` and parameter `-λ / (1 + λ)`.
    pub fn dual(&self) -> FuzzyMeasure {
        let k = self.k();
        let full = SubsetMask::full(k);
        let densities = (0..k)
            .map(|i| 1.0 - self.measure_unchecked(full.intersection(SubsetMask::singleton(i).complement(k))))
            .collect();
        FuzzyMeasure {
            densities,
            lambda: -self.lambda / (1.0 + self.lambda),
        }
    }

    /// Marginal vectors of the measure, one per permutation of the levels.
    pub fn core_extreme_points(&self) -> Result<CoreExtremePoints, MeasureError> {
        if !self.is_convex() {
            return Err(MeasureError::NotConvex {
                lambda: self.lambda,
            });
        }
        let k = self.k();
        if k > MAX_CORE_LEVELS {
            return Err(MeasureError::TooLarge { k });
        }
        let mut chain = vec![0.0; k];
        let points = (0..k)
            .permutations(k)
            .map(|order| {
                self.prefix_chain(&order, &mut chain);
                let mut p = vec![0.0; k];
                let mut previous = 0.0;
                for (i, &level) in order.iter().enumerate() {
                    p[level] = chain[i] - previous;
                    previous = chain[i];
                }
                MarginalVector { order, weights: p }
            })
            .collect();
        Ok(CoreExtremePoints { points })
    }
}

/// A marginal vector together with the permutation that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalVector {
    pub order: Vec<usize>,
    pub weights: Vec<f64>,
}

impl MarginalVector {
    pub fn probability_of(&self, subset: SubsetMask) -> f64 {
        subset.indices().map(|i| self.weights[i]).sum()
    }

    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Extreme points of the core of a convex λ-measure.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreExtremePoints {
    pub points: Vec<MarginalVector>,
}

impl CoreExtremePoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MarginalVector> {
        self.points.iter()
    }
}
