//! Trainable fuzzy densities.
//!
//! A [`DensityModel`] maps a state to `K` densities through a softmax and a
//! clamp to `[1e-4, 1 - 1e-4]`, either from a logits table or from a small
//! two-hidden-layer network over state features. Training minimises the
//! squared gap between Choquet-aggregated one-step targets and Monte Carlo
//! returns. The interaction parameter λ is re-solved on every forward pass
//! but held constant under differentiation, and the sort order of the level
//! values is frozen at the current point.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bellman::{BellmanError, Measures, Policy};
use crate::choquet::{sort_descending, Workspace};
use crate::cmdp::TabularCmdp;
use crate::exec::Execution;
use crate::lagrangian::{evaluate_policy, greedy_policy, multiplier_update, LagrangianError, OperatorSpec};
use crate::measure::{solve_lambda, FuzzyMeasure, MeasureError, LAMBDA_ZERO_TOL};
use crate::uncertainty::{counter_stream, LevelSource};

/// Lower clamp bound; the upper bound is `1 - DENSITY_FLOOR`.
pub const DENSITY_FLOOR: f64 = 1e-4;
pub const HIDDEN_WIDTH: usize = 32;
pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
/// Outer iterations between two density updates.
pub const DEFAULT_FUZZY_EVERY: usize = 5;
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("the transition batch is empty")]
    EmptyBatch,
    #[error("non-finite entry in sample {0}")]
    NonFiniteSample(usize),
    #[error("gradient has a non-finite component at parameter {0}")]
    NonFiniteGradient(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Bellman(#[from] BellmanError),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LearnerError {
    fn from(e: std::io::Error) -> Self {
        LearnerError::Io(e.to_string())
    }
}

/// Fully connected `inputs → hidden (tanh) → hidden (tanh) → outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    inputs: usize,
    hidden: usize,
    outputs: usize,
    /// `w1, b1, w2, b2, w3, b3`, weights row-major `[out][in]`.
    params: Vec<f64>,
}

struct MlpCache {
    h1: Vec<f64>,
    h2: Vec<f64>,
}

impl Mlp {
    /// Uniform initialisation in `±1/√fan_in`, zero biases.
    pub fn new(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut mlp = Mlp {
            inputs,
            hidden,
            outputs,
            params: vec![0.0; Self::param_count(inputs, hidden, outputs)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (offset, rows, cols) in mlp.weight_blocks() {
            let bound = 1.0 / (cols as f64).sqrt();
            for w in &mut mlp.params[offset..offset + rows * cols] {
                *w = rng.random_range(-bound..bound);
            }
        }
        mlp
    }

    pub fn param_count(inputs: usize, hidden: usize, outputs: usize) -> usize {
        hidden * inputs + hidden + hidden * hidden + hidden + outputs * hidden + outputs
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.inputs, self.hidden, self.outputs)
    }

    /// `(offset, rows, cols)` of the three weight matrices.
    fn weight_blocks(&self) -> [(usize, usize, usize); 3] {
        let (i, h, o) = self.shape();
        let w1 = 0;
        let w2 = w1 + h * i + h;
        let w3 = w2 + h * h + h;
        [(w1, h, i), (w2, h, h), (w3, o, h)]
    }

    fn layer(params: &[f64], offset: usize, rows: usize, cols: usize, x: &[f64], out: &mut Vec<f64>) {
        let w = &params[offset..offset + rows * cols];
        let b = &params[offset + rows * cols..offset + rows * cols + rows];
        out.clear();
        out.extend((0..rows).map(|r| b[r] + w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()));
    }

    fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let [(o1, r1, c1), (o2, r2, c2), (o3, r3, c3)] = self.weight_blocks();
        let mut h1 = Vec::with_capacity(r1);
        Self::layer(&self.params, o1, r1, c1, x, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = Vec::with_capacity(r2);
        Self::layer(&self.params, o2, r2, c2, &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = Vec::with_capacity(r3);
        Self::layer(&self.params, o3, r3, c3, &h2, &mut out);
        (out, MlpCache { h1, h2 })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂output`.
    fn backward(&self, x: &[f64], cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) {
        let [(o1, r1, c1), (o2, r2, c2), (o3, r3, c3)] = self.weight_blocks();
        let mut d_h2 = vec![0.0; r2];
        accumulate_layer(&self.params, grad, o3, r3, c3, &cache.h2, d_out, &mut d_h2);
        for (d, h) in d_h2.iter_mut().zip(&cache.h2) {
            *d *= 1.0 - h * h;
        }
        let mut d_h1 = vec![0.0; r1];
        accumulate_layer(&self.params, grad, o2, r2, c2, &cache.h1, &d_h2, &mut d_h1);
        for (d, h) in d_h1.iter_mut().zip(&cache.h1) {
            *d *= 1.0 - h * h;
        }
        let mut d_x = vec![0.0; c1];
        accumulate_layer(&self.params, grad, o1, r1, c1, x, &d_h1, &mut d_x);
    }
}

/// Gradient of `y = W x + b`: adds `d_y xᵀ` and `d_y` to `grad`, writes `Wᵀ d_y`.
#[allow(clippy::too_many_arguments)]
fn accumulate_layer(
    params: &[f64],
    grad: &mut [f64],
    offset: usize,
    rows: usize,
    cols: usize,
    x: &[f64],
    d_y: &[f64],
    d_x: &mut [f64],
) {
    d_x.iter_mut().for_each(|v| *v = 0.0);
    for r in 0..rows {
        let dy = d_y[r];
        if dy == 0.0 {
            continue;
        }
        let row = offset + r * cols;
        for c in 0..cols {
            grad[row + c] += dy * x[c];
            d_x[c] += dy * params[row + c];
        }
        grad[offset + rows * cols + r] += dy;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityParams {
    /// Logits, row-major `[state][level]`.
    Tabular(Vec<f64>),
    /// Network over per-state feature vectors.
    Network { mlp: Mlp, features: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    n_states: usize,
    k: usize,
    floor: f64,
    learning_rate: f64,
    params: DensityParams,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl DensityModel {
    /// Zero logits, so every state starts at `g = 1/K`.
    pub fn tabular(n_states: usize, k: usize) -> Self {
        Self::from_logits(n_states, k, vec![0.0; n_states * k]).expect("shape is consistent")
    }

    pub fn from_logits(n_states: usize, k: usize, logits: Vec<f64>) -> Result<Self, LearnerError> {
        if k == 0 || logits.len() != n_states * k {
            return Err(LearnerError::DimensionMismatch(format!(
                "{} logits for {n_states} states and K = {k}",
                logits.len()
            )));
        }
        Ok(DensityModel {
            n_states,
            k,
            floor: DENSITY_FLOOR,
            learning_rate: DEFAULT_LEARNING_RATE,
            params: DensityParams::Tabular(logits),
        })
    }

    /// Network mode; `features[s]` is the input vector of state `s`.
    pub fn network(features: Vec<Vec<f64>>, k: usize, seed: u64) -> Result<Self, LearnerError> {
        let d = features.first().map_or(0, Vec::len);
        if k == 0 || d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(LearnerError::DimensionMismatch("features must be non-empty and of equal length".into()));
        }
        Ok(DensityModel {
            n_states: features.len(),
            k,
            floor: DENSITY_FLOOR,
            learning_rate: DEFAULT_LEARNING_RATE,
            params: DensityParams::Network {
                mlp: Mlp::new(d, HIDDEN_WIDTH, k, seed),
                features,
            },
        })
    }

    /// One-hot state features.
    pub fn one_hot_features(n_states: usize) -> Vec<Vec<f64>> {
        (0..n_states)
            .map(|s| (0..n_states).map(|j| if j == s { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    pub fn with_learning_rate(mut self, learning_rate: f64) -> Self {
        self.learning_rate = learning_rate;
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn mode(&self) -> &'static str {
        match self.params {
            DensityParams::Tabular(_) => "tabular",
            DensityParams::Network { .. } => "network",
        }
    }

    pub fn density_params(&self) -> &DensityParams {
        &self.params
    }

    pub fn params(&self) -> &[f64] {
        match &self.params {
            DensityParams::Tabular(l) => l,
            DensityParams::Network { mlp, .. } => &mlp.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match &mut self.params {
            DensityParams::Tabular(l) => l,
            DensityParams::Network { mlp, .. } => &mut mlp.params,
        }
    }

    pub fn logits(&self, state: usize) -> Vec<f64> {
        match &self.params {
            DensityParams::Tabular(l) => l[state * self.k..(state + 1) * self.k].to_vec(),
            DensityParams::Network { mlp, features } => mlp.forward(&features[state]),
        }
    }

    fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.floor, 1.0 - self.floor)
    }

    /// `clamp(softmax(logits(s)))`, not renormalised.
    pub fn forward(&self, state: usize) -> Vec<f64> {
        softmax(&self.logits(state)).into_iter().map(|p| self.clamp(p)).collect()
    }

    pub fn measure(&self, state: usize) -> Result<FuzzyMeasure, LearnerError> {
        Ok(FuzzyMeasure::new(self.forward(state))?)
    }

    pub fn measures(&self) -> Result<Measures, LearnerError> {
        Ok(Measures::PerState(
            (0..self.n_states).map(|s| self.measure(s)).collect::<Result<_, _>>()?,
        ))
    }

    /// Adds `∂L/∂params` for one state given `∂L/∂g`.
    fn backprop(&self, state: usize, d_g: &[f64], grad: &mut [f64]) {
        let (z, cache) = match &self.params {
            DensityParams::Tabular(l) => (l[state * self.k..(state + 1) * self.k].to_vec(), None),
            DensityParams::Network { mlp, features } => {
                let (z, cache) = mlp.forward_cached(&features[state]);
                (z, Some(cache))
            }
        };
        let p = softmax(&z);
        // The clamp passes gradient only where it is inactive.
        let d_p: Vec<f64> = p
            .iter()
            .zip(d_g)
            .map(|(&p, &d)| if p > self.floor && p < 1.0 - self.floor { d } else { 0.0 })
            .collect();
        let inner: f64 = p.iter().zip(&d_p).map(|(a, b)| a * b).sum();
        let d_z: Vec<f64> = p.iter().zip(&d_p).map(|(p, d)| p * (d - inner)).collect();
        match (&self.params, cache) {
            (DensityParams::Tabular(_), _) => {
                for (g, d) in grad[state * self.k..(state + 1) * self.k].iter_mut().zip(&d_z) {
                    *g += d;
                }
            }
            (DensityParams::Network { mlp, features }, Some(cache)) => {
                mlp.backward(&features[state], &cache, &d_z, grad);
            }
            _ => unreachable!(),
        }
    }
}

/// `∏ (1 + λ g)` and the λ-rule value over a running set, with λ frozen.
#[derive(Clone, Copy)]
struct Running {
    lambda: f64,
    log_sum: f64,
    sum: f64,
}

impl Running {
    fn new(lambda: f64) -> Self {
        Running {
            lambda,
            log_sum: 0.0,
            sum: 0.0,
        }
    }

    fn push(&mut self, g: f64) {
        self.log_sum += (self.lambda * g).ln_1p();
        self.sum += g;
    }

    fn additive(&self) -> bool {
        self.lambda.abs() < LAMBDA_ZERO_TOL
    }

    fn value(&self) -> f64 {
        if self.additive() {
            self.sum
        } else {
            self.log_sum.exp_m1() / self.lambda
        }
    }

    fn product(&self) -> f64 {
        if self.additive() {
            1.0
        } else {
            self.log_sum.exp()
        }
    }
}

fn is_constant(values: &[f64]) -> bool {
    values.iter().all(|&v| v == values[0])
}

/// Choquet integral with λ held fixed, written as
/// `Σ_i M_i (f_(i) - f_(i+1))` over the head sets `H_i`, and its gradient
/// with respect to the densities. Every `M_i`, including the full set, uses
/// the raw λ-rule. Constant values give the constant and a zero gradient.
pub fn choquet_density_gradient(values: &[f64], densities: &[f64], lambda: f64, grad: &mut [f64]) -> f64 {
    let k = values.len();
    grad.iter_mut().for_each(|g| *g = 0.0);
    if is_constant(values) {
        return values[0];
    }
    let mut order: Vec<usize> = (0..k).collect();
    sort_descending(values, &mut order);
    let mut running = Running::new(lambda);
    let mut weights = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..k {
        running.push(densities[order[i]]);
        let next = if i + 1 < k { values[order[i + 1]] } else { 0.0 };
        let step = values[order[i]] - next;
        total += running.value() * step;
        weights[i] = step * running.product();
    }
    // ∂M_i/∂g_j = P_i / (1 + λ g_j) for every head set containing j.
    let mut suffix = 0.0;
    for i in (0..k).rev() {
        suffix += weights[i];
        let j = order[i];
        grad[j] = suffix / (1.0 + lambda * densities[j]);
    }
    total
}

/// Dual Choquet integral with λ held fixed, `Σ_i (1 - m(T_i)) (f_(i) - f_(i+1))`
/// where `T_i` is the complement of the head set `H_i`, and its gradient.
pub fn dual_choquet_density_gradient(values: &[f64], densities: &[f64], lambda: f64, grad: &mut [f64]) -> f64 {
    let k = values.len();
    grad.iter_mut().for_each(|g| *g = 0.0);
    if is_constant(values) {
        return values[0];
    }
    let mut order: Vec<usize> = (0..k).collect();
    sort_descending(values, &mut order);
    let mut running = Running::new(lambda);
    let mut weights = vec![0.0; k];
    let mut total = values[order[k - 1]];
    for i in (0..k - 1).rev() {
        running.push(densities[order[i + 1]]);
        let step = values[order[i]] - values[order[i + 1]];
        total += (1.0 - running.value()) * step;
        weights[i] = step * running.product();
    }
    // ∂(1 - m(T_i))/∂g_j = -Q_i / (1 + λ g_j) for every tail set containing j.
    let mut prefix = 0.0;
    for p in 0..k {
        let j = order[p];
        grad[j] = -prefix / (1.0 + lambda * densities[j]);
        prefix += weights[p];
    }
    total
}

/// One observed step together with its Monte Carlo returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub cost: f64,
    pub next_state: usize,
    pub return_r: f64,
    pub return_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    samples: Vec<Sample>,
}

impl TransitionBatch {
    pub fn new(samples: Vec<Sample>) -> Result<Self, LearnerError> {
        if samples.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        if let Some(i) = samples
            .iter()
            .position(|s| ![s.reward, s.cost, s.return_r, s.return_c].iter().all(|v| v.is_finite()))
        {
            return Err(LearnerError::NonFiniteSample(i));
        }
        Ok(TransitionBatch { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Value tables and level source the loss aggregates over.
#[derive(Clone, Copy)]
pub struct LossContext<'a> {
    pub levels: &'a dyn LevelSource,
    pub v_r: &'a [f64],
    pub v_c: &'a [f64],
    pub gamma: f64,
    pub n_actions: usize,
}

impl LossContext<'_> {
    fn level_values(&self, sample: &Sample, values: &[f64], out: &mut [f64]) {
        self.levels
            .level_values_into(sample.state * self.n_actions + sample.action, values, out);
    }

    fn check(&self, model: &DensityModel, batch: &TransitionBatch) -> Result<(), LearnerError> {
        if self.levels.n_levels() != model.k() {
            return Err(LearnerError::DimensionMismatch(format!(
                "model has K = {}, levels have K = {}",
                model.k(),
                self.levels.n_levels()
            )));
        }
        if self.v_r.len() != model.n_states() || self.v_c.len() != model.n_states() {
            return Err(LearnerError::DimensionMismatch("value tables do not match the model".into()));
        }
        if let Some(s) = batch
            .samples()
            .iter()
            .find(|s| s.state >= model.n_states() || s.action >= self.n_actions)
        {
            return Err(LearnerError::DimensionMismatch(format!(
                "sample pair ({}, {}) is out of range",
                s.state, s.action
            )));
        }
        Ok(())
    }
}

/// `mean[(r + γ Ṽ_r - R)² + (c + γ Ṽ_c - C)²]`, with `Ṽ_r` the Choquet and
/// `Ṽ_c` the dual Choquet integral of the level values of `(s_t, a_t)`
/// under the model's densities at `s_t`.
pub fn fuzzy_loss(model: &DensityModel, batch: &TransitionBatch, ctx: &LossContext<'_>) -> Result<f64, LearnerError> {
    ctx.check(model, batch)?;
    let measures: Vec<Option<FuzzyMeasure>> = states_in(batch, model.n_states())
        .into_iter()
        .enumerate()
        .map(|(s, used)| used.then(|| model.measure(s)).transpose())
        .collect::<Result<_, _>>()?;
    let mut ws = Workspace::new(model.k());
    let mut lr = vec![0.0; model.k()];
    let mut lc = vec![0.0; model.k()];
    let mut total = 0.0;
    for sample in batch.samples() {
        let m = measures[sample.state].as_ref().expect("state is in the batch");
        ctx.level_values(sample, ctx.v_r, &mut lr);
        ctx.level_values(sample, ctx.v_c, &mut lc);
        let e_r = sample.reward + ctx.gamma * ws.integrate(&lr, m) - sample.return_r;
        let e_c = sample.cost + ctx.gamma * ws.integrate_dual(&lc, m) - sample.return_c;
        total += e_r * e_r + e_c * e_c;
    }
    Ok(total / batch.len() as f64)
}

fn states_in(batch: &TransitionBatch, n_states: usize) -> Vec<bool> {
    let mut used = vec![false; n_states];
    for s in batch.samples() {
        used[s.state] = true;
    }
    used
}

/// λ of every state that appears in the batch (`NaN` elsewhere).
pub fn frozen_lambdas(model: &DensityModel, batch: &TransitionBatch) -> Result<Vec<f64>, LearnerError> {
    states_in(batch, model.n_states())
        .into_iter()
        .enumerate()
        .map(|(s, used)| if used { Ok(solve_lambda(&model.forward(s))?) } else { Ok(f64::NAN) })
        .collect()
}

/// The loss with every λ replaced by `lambdas[state]`, and its gradient
/// with respect to the model parameters.
pub fn detached_loss_and_gradient(
    model: &DensityModel,
    batch: &TransitionBatch,
    ctx: &LossContext<'_>,
    lambdas: &[f64],
) -> Result<(f64, Vec<f64>), LearnerError> {
    ctx.check(model, batch)?;
    let k = model.k();
    let mut d_g = vec![vec![0.0; k]; model.n_states()];
    let densities: Vec<Option<Vec<f64>>> = states_in(batch, model.n_states())
        .into_iter()
        .enumerate()
        .map(|(s, used)| used.then(|| model.forward(s)))
        .collect();
    let (mut lr, mut lc) = (vec![0.0; k], vec![0.0; k]);
    let (mut gr, mut gc) = (vec![0.0; k], vec![0.0; k]);
    let n = batch.len() as f64;
    let mut total = 0.0;
    for sample in batch.samples() {
        let g = densities[sample.state].as_ref().expect("state is in the batch");
        let lambda = lambdas[sample.state];
        ctx.level_values(sample, ctx.v_r, &mut lr);
        ctx.level_values(sample, ctx.v_c, &mut lc);
        let e_r = sample.reward + ctx.gamma * choquet_density_gradient(&lr, g, lambda, &mut gr) - sample.return_r;
        let e_c = sample.cost + ctx.gamma * dual_choquet_density_gradient(&lc, g, lambda, &mut gc) - sample.return_c;
        total += e_r * e_r + e_c * e_c;
        for ((d, a), b) in d_g[sample.state].iter_mut().zip(&gr).zip(&gc) {
            *d += 2.0 * ctx.gamma * (e_r * a + e_c * b) / n;
        }
    }
    let mut grad = vec![0.0; model.params().len()];
    for (s, d) in d_g.iter().enumerate() {
        if densities[s].is_some() {
            model.backprop(s, d, &mut grad);
        }
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(LearnerError::NonFiniteGradient(i));
    }
    Ok((total / n, grad))
}

/// Loss at the current parameters and its λ-detached gradient.
pub fn loss_and_gradient(
    model: &DensityModel,
    batch: &TransitionBatch,
    ctx: &LossContext<'_>,
) -> Result<(f64, Vec<f64>), LearnerError> {
    let lambdas = frozen_lambdas(model, batch)?;
    detached_loss_and_gradient(model, batch, ctx, &lambdas)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub loss_before: f64,
    pub loss_after: f64,
    pub gradient_norm: f64,
    /// Step actually taken; zero when every halving increased the loss.
    pub step: f64,
    pub halvings: usize,
}

impl GradientReport {
    pub fn accepted(&self) -> bool {
        self.step > 0.0
    }
}

/// One gradient-descent step with step halving: the step is halved until
/// the loss does not increase, at most [`MAX_HALVINGS`] times.
pub fn gradient_step(
    model: &mut DensityModel,
    batch: &TransitionBatch,
    ctx: &LossContext<'_>,
) -> Result<GradientReport, LearnerError> {
    let (_, grad) = loss_and_gradient(model, batch, ctx)?;
    let before = fuzzy_loss(model, batch, ctx)?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let start = model.params().to_vec();
    let mut step = model.learning_rate();
    for halvings in 0..=MAX_HALVINGS {
        for ((p, s), g) in model.params_mut().iter_mut().zip(&start).zip(&grad) {
            *p = s - step * g;
        }
        let after = fuzzy_loss(model, batch, ctx)?;
        if after <= before {
            return Ok(GradientReport {
                loss_before: before,
                loss_after: after,
                gradient_norm: norm,
                step,
                halvings,
            });
        }
        step *= 0.5;
    }
    model.params_mut().copy_from_slice(&start);
    Ok(GradientReport {
        loss_before: before,
        loss_after: before,
        gradient_norm: norm,
        step: 0.0,
        halvings: MAX_HALVINGS,
    })
}

fn sample_row(row: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(j, p) in row {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.last().map_or(0, |e| e.0)
}

/// Rollouts of a deterministic policy on the nominal kernel, each step
/// labelled with its truncated discounted reward and cost returns.
pub fn collect_batch(
    cmdp: &TabularCmdp,
    policy: &Policy,
    episodes: usize,
    horizon: usize,
    seed: u64,
    stream: u64,
) -> Result<TransitionBatch, LearnerError> {
    let mut samples = Vec::with_capacity(episodes * horizon);
    for episode in 0..episodes {
        let mut rng = counter_stream(seed, stream, (episode as u128) << 32);
        let mut state = sample_row(
            &cmdp.d0().iter().copied().enumerate().collect::<Vec<_>>(),
            rng.random::<f64>(),
        );
        let start = samples.len();
        for _ in 0..horizon {
            let action = match policy {
                Policy::Deterministic(a) => a[state],
                Policy::Stochastic(rows) => {
                    let row: Vec<(usize, f64)> = rows[state].iter().copied().enumerate().collect();
                    sample_row(&row, rng.random::<f64>())
                }
            };
            let next_state = sample_row(cmdp.row(state, action), rng.random::<f64>());
            samples.push(Sample {
                state,
                action,
                reward: cmdp.reward(state, action),
                cost: cmdp.cost(state, action),
                next_state,
                return_r: 0.0,
                return_c: 0.0,
            });
            state = next_state;
        }
        let (mut gr, mut gc) = (0.0, 0.0);
        for s in samples[start..].iter_mut().rev() {
            gr = s.reward + cmdp.gamma() * gr;
            gc = s.cost + cmdp.gamma() * gc;
            s.return_r = gr;
            s.return_c = gc;
        }
    }
    TransitionBatch::new(samples)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub alpha: f64,
    pub fuzzy_every: usize,
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 50,
            alpha: crate::lagrangian::DEFAULT_ALPHA,
            fuzzy_every: DEFAULT_FUZZY_EVERY,
            episodes: 8,
            horizon: 50,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRow {
    pub iter: usize,
    pub j_r: f64,
    pub j_c: f64,
    pub multiplier: f64,
    /// Loss of the current densities on the most recent batch.
    pub fuzzy_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub rows: Vec<TrainRow>,
    pub policy: Policy,
    pub multiplier: f64,
}

/// Primal-dual iteration with fuzzy evaluation under learned per-state
/// densities; the densities take one gradient step every
/// `config.fuzzy_every` iterations on fresh rollouts of the current policy.
pub fn train(
    cmdp: &TabularCmdp,
    levels: &dyn LevelSource,
    model: &mut DensityModel,
    config: &TrainConfig,
) -> Result<TrainOutcome, LearnerError> {
    if !(config.alpha > 0.0) {
        return Err(LagrangianError::InvalidStepSize(config.alpha).into());
    }
    if config.iters == 0 {
        return Err(LagrangianError::NoIterations.into());
    }
    if model.n_states() != cmdp.n_states() {
        return Err(LearnerError::DimensionMismatch("model and CMDP state counts differ".into()));
    }
    let fuzzy_every = config.fuzzy_every.max(1);
    let mut multiplier = 0.0;
    let mut policy: Option<Policy> = None;
    let mut batch: Option<TransitionBatch> = None;
    let mut rows = Vec::with_capacity(config.iters);
    for iter in 0..config.iters {
        let measures = model.measures()?;
        let spec = OperatorSpec::fuzzy(levels, &measures).with_execution(config.execution);
        let reward_op = spec.reward_operator(cmdp)?;
        let cost_op = spec.cost_operator(cmdp)?;
        let current = match policy.take() {
            Some(p) => p,
            None => {
                let (v, _) = crate::bellman::value_iteration(
                    &reward_op,
                    None,
                    crate::lagrangian::EVAL_TOL,
                    crate::lagrangian::EVAL_MAX_ITER,
                )?;
                reward_op.greedy_policy(&v)?
            }
        };
        let eval = evaluate_policy(cmdp, &current, &spec)?;
        let ctx = LossContext {
            levels,
            v_r: &eval.v_r,
            v_c: &eval.v_c,
            gamma: cmdp.gamma(),
            n_actions: cmdp.n_actions(),
        };
        let loss = if iter % fuzzy_every == 0 {
            let fresh = collect_batch(cmdp, &current, config.episodes, config.horizon, config.seed, iter as u64)?;
            let report = gradient_step(model, &fresh, &ctx)?;
            batch = Some(fresh);
            report.loss_after
        } else {
            fuzzy_loss(model, batch.as_ref().expect("first iteration collects a batch"), &ctx)?
        };
        rows.push(TrainRow {
            iter,
            j_r: eval.j_r,
            j_c: eval.j_c,
            multiplier,
            fuzzy_loss: loss,
        });
        multiplier = multiplier_update(multiplier, config.alpha, eval.j_c, cmdp.budget());
        let q_r = reward_op.q_values(&eval.v_r)?;
        let q_c = cost_op.q_values(&eval.v_c)?;
        policy = Some(greedy_policy(&q_r, &q_c, multiplier, cmdp.n_actions())?);
    }
    Ok(TrainOutcome {
        rows,
        policy: policy.expect("at least one iteration ran"),
        multiplier,
    })
}

fn format_row(out: &mut String, values: &[f64]) {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    out.push_str(&parts.join(" "));
    out.push('\n');
}

/// Plain-text checkpoint: a header of `key value` lines followed by
/// row-major parameter blocks.
pub fn write_checkpoint_string(model: &DensityModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mode {}", model.mode());
    let _ = writeln!(out, "states {}", model.n_states);
    let _ = writeln!(out, "levels {}", model.k);
    let _ = writeln!(out, "floor {:?}", model.floor);
    let _ = writeln!(out, "learning_rate {:?}", model.learning_rate);
    match &model.params {
        DensityParams::Tabular(logits) => {
            out.push_str("logits\n");
            for row in logits.chunks(model.k) {
                format_row(&mut out, row);
            }
        }
        DensityParams::Network { mlp, features } => {
            let _ = writeln!(out, "inputs {}", mlp.inputs);
            let _ = writeln!(out, "hidden {}", mlp.hidden);
            out.push_str("features\n");
            for f in features {
                format_row(&mut out, f);
            }
            out.push_str("params\n");
            for (offset, rows, cols) in mlp.weight_blocks() {
                for r in 0..rows {
                    format_row(&mut out, &mlp.params[offset + r * cols..offset + (r + 1) * cols]);
                }
                format_row(&mut out, &mlp.params[offset + rows * cols..offset + rows * cols + rows]);
            }
        }
    }
    out
}

fn checkpoint_err(line: usize, message: &str) -> LearnerError {
    LearnerError::Checkpoint {
        line,
        message: message.to_string(),
    }
}

fn read_rows<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    count: usize,
    width: usize,
) -> Result<Vec<Vec<f64>>, LearnerError> {
    (0..count)
        .map(|_| {
            let (n, line) = lines
                .next()
                .ok_or_else(|| checkpoint_err(0, "unexpected end of checkpoint"))?;
            let row = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| checkpoint_err(n, &format!("'{t}' is not a number")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != width {
                return Err(checkpoint_err(n, &format!("expected {width} numbers")));
            }
            Ok(row)
        })
        .collect()
}

pub fn parse_checkpoint(text: &str) -> Result<DensityModel, LearnerError> {
    let err = checkpoint_err;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut header = std::collections::HashMap::new();
    let mut block = None;
    for (n, line) in lines.by_ref() {
        match line.split_once(' ') {
            Some((key, value)) => {
                header.insert(key.to_string(), (n, value.trim().to_string()));
            }
            None => {
                block = Some((n, line.to_string()));
                break;
            }
        }
    }
    let get = |key: &str| header.get(key).ok_or_else(|| err(1, &format!("missing '{key}'")));
    let int = |key: &str| -> Result<usize, LearnerError> {
        let (n, v) = get(key)?;
        v.parse().map_err(|_| err(*n, &format!("'{key}' is not an integer")))
    };
    let real = |key: &str| -> Result<f64, LearnerError> {
        let (n, v) = get(key)?;
        v.parse().map_err(|_| err(*n, &format!("'{key}' is not a number")))
    };
    let (mode_line, mode) = get("mode")?.clone();
    let n_states = int("states")?;
    let k = int("levels")?;
    let floor = real("floor")?;
    let learning_rate = real("learning_rate")?;
    let params = match mode.as_str() {
        "tabular" => {
            if block.as_ref().map(|b| b.1.as_str()) != Some("logits") {
                return Err(err(mode_line, "expected a 'logits' block"));
            }
            DensityParams::Tabular(read_rows(&mut lines, n_states, k)?.concat())
        }
        "network" => {
            let inputs = int("inputs")?;
            let hidden = int("hidden")?;
            if block.as_ref().map(|b| b.1.as_str()) != Some("features") {
                return Err(err(mode_line, "expected a 'features' block"));
            }
            let features = read_rows(&mut lines, n_states, inputs)?;
            match lines.next() {
                Some((_, "params")) => {}
                Some((n, _)) => return Err(err(n, "expected 'params'")),
                None => return Err(err(0, "unexpected end of checkpoint")),
            }
            let mut mlp = Mlp {
                inputs,
                hidden,
                outputs: k,
                params: Vec::with_capacity(Mlp::param_count(inputs, hidden, k)),
            };
            for (_, rows, cols) in mlp.weight_blocks() {
                mlp.params.extend(read_rows(&mut lines, rows, cols)?.concat());
                mlp.params.extend(read_rows(&mut lines, 1, rows)?.concat());
            }
            DensityParams::Network { mlp, features }
        }
        _ => return Err(err(mode_line, "mode must be 'tabular' or 'network'")),
    };
    Ok(DensityModel {
        n_states,
        k,
        floor,
        learning_rate,
        params,
    })
}

pub fn save_checkpoint(model: &DensityModel, path: impl AsRef<Path>) -> Result<(), LearnerError> {
    std::fs::write(path, write_checkpoint_string(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DensityModel, LearnerError> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_give_uniform_densities() {
        let m = DensityModel::tabular(3, 4);
        assert_eq!(m.forward(1), vec![0.25; 4]);
    }

    #[test]
    fn softmax_example() {
        let m = DensityModel::from_logits(1, 2, vec![3f64.ln(), 0.0]).unwrap();
        let g = m.forward(0);
        assert!((g[0] - 0.75).abs() < 1e-15 && (g[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn saturated_logit_hits_clamp() {
        let m = DensityModel::from_logits(1, 3, vec![1e3, 0.0, 0.0]).unwrap();
        assert_eq!(m.forward(0), vec![1.0 - DENSITY_FLOOR, DENSITY_FLOOR, DENSITY_FLOOR]);
    }

    #[test]
    fn additive_gradient_is_values() {
        let f = [3.0, -1.0, 2.0];
        let g = [0.2, 0.5, 0.3];
        let mut grad = [0.0; 3];
        let v = choquet_density_gradient(&f, &g, 0.0, &mut grad);
        assert!((v - (0.6 - 0.5 + 0.6)).abs() < 1e-12);
        for (a, b) in grad.iter().zip(f) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_values_have_zero_gradient() {
        let mut grad = [1.0; 3];
        assert_eq!(choquet_density_gradient(&[2.0; 3], &[0.2, 0.2, 0.2], 1.7, &mut grad), 2.0);
        assert_eq!(grad, [0.0; 3]);
        grad = [1.0; 3];
        assert_eq!(dual_choquet_density_gradient(&[2.0; 3], &[0.2, 0.2, 0.2], 1.7, &mut grad), 2.0);
        assert_eq!(grad, [0.0; 3]);
    }

    #[test]
    fn detached_values_match_the_integrals() {
        let m = FuzzyMeasure::new(vec![0.1, 0.3, 0.2, 0.15]).unwrap();
        let f = [0.4, -2.0, 1.5, 0.9];
        let mut grad = [0.0; 4];
        let a = choquet_density_gradient(&f, m.densities(), m.lambda(), &mut grad);
        let b = dual_choquet_density_gradient(&f, m.densities(), m.lambda(), &mut grad);
        assert!((a - crate::choquet::choquet_integral(&f, &m).unwrap()).abs() < 1e-12);
        assert!((b - crate::choquet::dual_choquet_integral(&f, &m).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = DensityModel::from_logits(2, 3, vec![0.1, -0.2, 0.3, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(parse_checkpoint(&write_checkpoint_string(&m)).unwrap(), m);
        let n = DensityModel::network(DensityModel::one_hot_features(3), 2, 9).unwrap();
        let again = parse_checkpoint(&write_checkpoint_string(&n)).unwrap();
        assert_eq!(again, n);
        assert_eq!(again.forward(2), n.forward(2));
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert_eq!(TransitionBatch::new(vec![]), Err(LearnerError::EmptyBatch));
    }
}
