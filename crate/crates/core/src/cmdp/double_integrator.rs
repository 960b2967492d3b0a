//! The double-integrator benchmark and its grid discretisation.

use super::{CmdpError, CmdpParts, TabularCmdp};

/// Position and velocity limits of the safe set: `|x| ≤ 2`, `|v| ≤ 2`.
pub const SAFE_LIMIT: f64 = 2.0;

/// Per-step position gain in `Dynamics::Paper`.
const PAPER_INPUT_GAIN: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector {
    pub x: f64,
    pub v: f64,
}

impl StateVector {
    pub fn new(x: f64, v: f64) -> Self {
        StateVector { x, v }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dynamics {
    /// Identity state matrix with input column `(0.005, 0)ᵀ`.
    #[default]
    Paper,
    /// Euler-discretised `ẋ = v, v̇ = a` with step `dt`.
    Standard,
}

impl std::str::FromStr for Dynamics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Dynamics::Paper),
            "standard" => Ok(Dynamics::Standard),
            other => Err(format!("unknown dynamics mode '{other}' (expected paper|standard)")),
        }
    }
}

impl std::fmt::Display for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dynamics::Paper => "paper",
            Dynamics::Standard => "standard",
        })
    }
}

pub fn di_step(s: StateVector, a: f64, mode: Dynamics, dt: f64) -> Result<StateVector, CmdpError> {
    if !(-1.0..=1.0).contains(&a) {
        return Err(CmdpError::ActionOutOfRange(a));
    }
    Ok(match mode {
        Dynamics::Paper => StateVector::new(s.x + PAPER_INPUT_GAIN * a, s.v),
        Dynamics::Standard => StateVector::new(s.x + dt * s.v, s.v + dt * a),
    })
}

/// Sum of four clipped quadratic bumps around `(±1.5, ∓1.5)` and `(±2.2, ±2.2)`.
pub fn di_reward(s: StateVector) -> f64 {
    let (x, v) = (s.x, s.v);
    let bump = |height: f64, curvature: f64, cx: f64, cv: f64| {
        (height - (curvature * (x - cx).powi(2) + curvature * (v - cv).powi(2))).max(0.0)
    };
    bump(4.0, 2.0, 1.5, -1.5)
        + bump(5.0, 3.0, -2.2, -2.2)
        + bump(5.0, 3.0, 2.2, 2.2)
        + bump(4.0, 2.0, -1.5, 1.5)
}

/// 1 outside the closed safe box, 0 inside.
pub fn di_cost(s: StateVector) -> f64 {
    if s.x.abs() > SAFE_LIMIT || s.v.abs() > SAFE_LIMIT {
        1.0
    } else {
        0.0
    }
}

/// Uniform cell grid over position × velocity with evenly spaced actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_bounds: (f64, f64),
    pub v_bounds: (f64, f64),
    pub x_cells: usize,
    pub v_cells: usize,
    pub n_actions: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_bounds: (-2.5, 2.5),
            v_bounds: (-2.5, 2.5),
            x_cells: 51,
            v_cells: 51,
            n_actions: 11,
        }
    }
}

impl GridSpec {
    pub fn square(half_width: f64, cells: usize, n_actions: usize) -> Self {
        GridSpec {
            x_bounds: (-half_width, half_width),
            v_bounds: (-half_width, half_width),
            x_cells: cells,
            v_cells: cells,
            n_actions,
        }
    }

    pub fn validate(&self) -> Result<(), CmdpError> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ordered(self.x_bounds) || !ordered(self.v_bounds) {
            return Err(CmdpError::InvalidGrid("bounds must be finite and strictly ordered".into()));
        }
        if self.x_cells < 2 || self.v_cells < 2 {
            return Err(CmdpError::InvalidGrid("at least 2 cells per dimension are required".into()));
        }
        if self.n_actions == 0 {
            return Err(CmdpError::InvalidGrid("at least one action is required".into()));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.x_cells * self.v_cells
    }

    fn width(bounds: (f64, f64), cells: usize) -> f64 {
        (bounds.1 - bounds.0) / cells as f64
    }

    pub fn cell_widths(&self) -> (f64, f64) {
        (
            Self::width(self.x_bounds, self.x_cells),
            Self::width(self.v_bounds, self.v_cells),
        )
    }

    fn axis_index(value: f64, bounds: (f64, f64), cells: usize) -> usize {
        let clipped = value.clamp(bounds.0, bounds.1);
        let i = ((clipped - bounds.0) / Self::width(bounds, cells)).floor();
        (i.max(0.0) as usize).min(cells - 1)
    }

    /// Index of the cell containing `s` after clipping to the grid bounds.
    pub fn snap(&self, s: StateVector) -> usize {
        let ix = Self::axis_index(s.x, self.x_bounds, self.x_cells);
        let iv = Self::axis_index(s.v, self.v_bounds, self.v_cells);
        ix * self.v_cells + iv
    }

    pub fn clip(&self, s: StateVector) -> StateVector {
        StateVector::new(
            s.x.clamp(self.x_bounds.0, self.x_bounds.1),
            s.v.clamp(self.v_bounds.0, self.v_bounds.1),
        )
    }

    pub fn center(&self, state: usize) -> StateVector {
        let (wx, wv) = self.cell_widths();
        let ix = state / self.v_cells;
        let iv = state % self.v_cells;
        StateVector::new(
            self.x_bounds.0 + (ix as f64 + 0.5) * wx,
            self.v_bounds.0 + (iv as f64 + 0.5) * wv,
        )
    }

    /// `(x_lo, x_hi, v_lo, v_hi)` of a cell.
    pub fn cell_extent(&self, state: usize) -> (f64, f64, f64, f64) {
        let (wx, wv) = self.cell_widths();
        let ix = (state / self.v_cells) as f64;
        let iv = (state % self.v_cells) as f64;
        (
            self.x_bounds.0 + ix * wx,
            self.x_bounds.0 + (ix + 1.0) * wx,
            self.v_bounds.0 + iv * wv,
            self.v_bounds.0 + (iv + 1.0) * wv,
        )
    }

    pub fn action(&self, index: usize) -> f64 {
        if self.n_actions == 1 {
            0.0
        } else {
            -1.0 + 2.0 * index as f64 / (self.n_actions - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleIntegratorConfig {
    pub grid: GridSpec,
    pub dynamics: Dynamics,
    pub dt: f64,
    pub gamma: f64,
    pub budget: f64,
}

impl Default for DoubleIntegratorConfig {
    fn default() -> Self {
        DoubleIntegratorConfig {
            grid: GridSpec::default(),
            dynamics: Dynamics::Paper,
            dt: 0.05,
            gamma: 0.95,
            budget: f64::INFINITY,
        }
    }
}

/// A discretised double integrator together with its continuous geometry.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    pub cmdp: TabularCmdp,
    pub config: DoubleIntegratorConfig,
    /// Continuous pre-snap successor of each `(cell centre, action)`,
    /// indexed by `state * n_actions + action`.
    pub successors: Vec<StateVector>,
}

impl DoubleIntegrator {
    pub fn grid(&self) -> &GridSpec {
        &self.config.grid
    }

    pub fn step(&self, s: StateVector, action: usize) -> StateVector {
        let a = self.config.grid.action(action);
        di_step(s, a, self.config.dynamics, self.config.dt).expect("grid actions lie in [-1, 1]")
    }

    /// Normalised cell-centre coordinates, one feature row per state.
    pub fn features(&self) -> Vec<Vec<f64>> {
        let grid = self.grid();
        let sx = grid.x_bounds.1.abs().max(grid.x_bounds.0.abs());
        let sv = grid.v_bounds.1.abs().max(grid.v_bounds.0.abs());
        (0..grid.n_states())
            .map(|s| {
                let c = grid.center(s);
                vec![c.x / sx, c.v / sv]
            })
            .collect()
    }
}

pub fn build_double_integrator(config: DoubleIntegratorConfig) -> Result<DoubleIntegrator, CmdpError> {
    let grid = config.grid;
    grid.validate()?;
    if grid.x_bounds.0 > -2.5 || grid.x_bounds.1 < 2.5 || grid.v_bounds.0 > -2.5 || grid.v_bounds.1 < 2.5 {
        return Err(CmdpError::InvalidGrid("bounds must cover [-2.5, 2.5]^2".into()));
    }
    if config.dynamics == Dynamics::Standard && !(config.dt > 0.0) {
        return Err(CmdpError::InvalidGrid(format!("dt must be positive, got {}", config.dt)));
    }
    let n_states = grid.n_states();
    let n_actions = grid.n_actions;
    let mut transitions = Vec::with_capacity(n_states * n_actions);
    let mut reward = Vec::with_capacity(n_states * n_actions);
    let mut cost = Vec::with_capacity(n_states * n_actions);
    let mut successors = Vec::with_capacity(n_states * n_actions);
    for s in 0..n_states {
        let centre = grid.center(s);
        for a in 0..n_actions {
            let next = di_step(centre, grid.action(a), config.dynamics, config.dt)?;
            transitions.push(vec![(grid.snap(next), 1.0)]);
            reward.push(di_reward(next));
            cost.push(di_cost(next));
            successors.push(next);
        }
    }
    let mut d0 = vec![0.0; n_states];
    d0[grid.snap(StateVector::default())] = 1.0;
    let cmdp = TabularCmdp::try_from(CmdpParts {
        n_states,
        n_actions,
        transitions,
        reward,
        cost,
        gamma: config.gamma,
        d0,
        budget: config.budget,
    })?;
    Ok(DoubleIntegrator {
        cmdp,
        config,
        successors,
    })
}
