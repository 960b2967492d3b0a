//! `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Keys are listed in
//! [`KEYS`]; command-line overrides go through the same parser and are
//! applied after the file, so flags win.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use choquet_dp::cmdp::{Dynamics, GridSpec};
use choquet_dp::exec::Execution;

use crate::demo::{DemoParams, OperatorKind};
use crate::CliError;

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "env",
    "cmdp_file",
    "kernels_file",
    "operator",
    "k",
    "eps_base",
    "samples",
    "seed",
    "seeds",
    "gamma",
    "budget",
    "alpha",
    "tol",
    "max_iter",
    "iters",
    "x_cells",
    "v_cells",
    "n_actions",
    "half_width",
    "dynamics",
    "dt",
    "density_mode",
    "densities",
    "density_mass",
    "multiplier",
    "episodes",
    "horizon",
    "test_level",
    "fuzzy_every",
    "learning_rate",
    "train_episodes",
    "train_horizon",
    "ablation_k",
    "execution",
    "out_dir",
];

/// The configuration shipped as the default for `demo-di` and `ablation`.
pub const DEMO_CONFIG: &str = include_str!("../configs/demo_di.conf");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Environment {
    /// One state, one action, reward 1: `V* = 1 / (1 - γ)`.
    Toy,
    File,
    DoubleIntegrator,
}

impl FromStr for Environment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toy" => Ok(Environment::Toy),
            "file" => Ok(Environment::File),
            "double_integrator" => Ok(Environment::DoubleIntegrator),
            other => Err(format!("unknown env '{other}' (expected toy|file|double_integrator)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityMode {
    Tabular,
    Network,
}

impl FromStr for DensityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tabular" => Ok(DensityMode::Tabular),
            "network" => Ok(DensityMode::Network),
            other => Err(format!("unknown density_mode '{other}' (expected tabular|network)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: Environment,
    pub cmdp_file: Option<PathBuf>,
    pub kernels_file: Option<PathBuf>,
    pub operator: OperatorKind,
    pub k: usize,
    pub eps_base: f64,
    pub samples: usize,
    pub seed: u64,
    pub seeds: Vec<u64>,
    /// Overrides the discount of file-based CMDPs when set.
    pub gamma: Option<f64>,
    /// Overrides the budget of file-based CMDPs when set.
    pub budget: Option<f64>,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub iters: usize,
    pub grid: GridSpec,
    pub dynamics: Dynamics,
    pub dt: f64,
    pub density_mode: DensityMode,
    pub densities: Option<Vec<f64>>,
    pub density_mass: f64,
    pub multiplier: f64,
    pub episodes: usize,
    pub horizon: usize,
    pub test_level: f64,
    pub fuzzy_every: usize,
    pub learning_rate: f64,
    pub train_episodes: usize,
    pub train_horizon: usize,
    pub ablation_k: Vec<usize>,
    pub execution: Execution,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let demo = DemoParams::default();
        RunConfig {
            env: Environment::Toy,
            cmdp_file: None,
            kernels_file: None,
            operator: OperatorKind::Fuzzy,
            k: 10,
            eps_base: 0.1,
            samples: 5,
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            gamma: None,
            budget: None,
            alpha: choquet_dp::lagrangian::DEFAULT_ALPHA,
            tol: 1e-8,
            max_iter: 10_000,
            iters: 50,
            grid: GridSpec::default(),
            dynamics: Dynamics::Paper,
            dt: demo.dt,
            density_mode: DensityMode::Tabular,
            densities: None,
            density_mass: demo.density_mass,
            multiplier: 0.0,
            episodes: demo.episodes,
            horizon: demo.horizon,
            test_level: demo.test_level,
            fuzzy_every: choquet_dp::learner::DEFAULT_FUZZY_EVERY,
            learning_rate: choquet_dp::learner::DEFAULT_LEARNING_RATE,
            train_episodes: 8,
            train_horizon: 50,
            ablation_k: vec![1, 5, 15, 25],
            execution: Execution::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value '{value}' for '{key}'"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse(key, t))
        .collect()
}

fn positive(key: &str, value: f64) -> Result<f64, String> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(format!("'{key}' must be positive, got {value}"))
    }
}

fn at_least_one(key: &str, value: usize) -> Result<usize, String> {
    if value >= 1 {
        Ok(value)
    } else {
        Err(format!("'{key}' must be at least 1"))
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key {
            "env" => self.env = value.parse()?,
            "cmdp_file" => self.cmdp_file = Some(PathBuf::from(value)),
            "kernels_file" => self.kernels_file = Some(PathBuf::from(value)),
            "operator" => self.operator = value.parse()?,
            "k" => self.k = at_least_one(key, parse(key, value)?)?,
            "eps_base" => {
                let eps: f64 = parse(key, value)?;
                if !(eps >= 0.0) || !eps.is_finite() {
                    return Err(format!("'eps_base' must be non-negative, got {eps}"));
                }
                self.eps_base = eps;
            }
            "samples" => self.samples = at_least_one(key, parse(key, value)?)?,
            "seed" => self.seed = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "gamma" => self.gamma = Some(parse(key, value)?),
            "budget" => self.budget = Some(parse(key, value)?),
            "alpha" => self.alpha = positive(key, parse(key, value)?)?,
            "tol" => self.tol = positive(key, parse(key, value)?)?,
            "max_iter" => self.max_iter = at_least_one(key, parse(key, value)?)?,
            "iters" => self.iters = at_least_one(key, parse(key, value)?)?,
            "x_cells" => self.grid.x_cells = at_least_one(key, parse(key, value)?)?,
            "v_cells" => self.grid.v_cells = at_least_one(key, parse(key, value)?)?,
            "n_actions" => self.grid.n_actions = at_least_one(key, parse(key, value)?)?,
            "half_width" => {
                let h = positive(key, parse(key, value)?)?;
                self.grid.x_bounds = (-h, h);
                self.grid.v_bounds = (-h, h);
            }
            "dynamics" => self.dynamics = value.parse()?,
            "dt" => self.dt = positive(key, parse(key, value)?)?,
            "density_mode" => self.density_mode = value.parse()?,
            "densities" => {
                self.densities = if value.is_empty() || value == "uniform" {
                    None
                } else {
                    Some(parse_list(key, value)?)
                }
            }
            "density_mass" => self.density_mass = positive(key, parse(key, value)?)?,
            "multiplier" => {
                let mu: f64 = parse(key, value)?;
                if !(mu >= 0.0) {
                    return Err(format!("'multiplier' must be non-negative, got {mu}"));
                }
                self.multiplier = mu;
            }
            "episodes" => self.episodes = at_least_one(key, parse(key, value)?)?,
            "horizon" => self.horizon = at_least_one(key, parse(key, value)?)?,
            "test_level" => {
                let level: f64 = parse(key, value)?;
                if !(level >= 0.0) {
                    return Err(format!("'test_level' must be non-negative, got {level}"));
                }
                self.test_level = level;
            }
            "fuzzy_every" => self.fuzzy_every = at_least_one(key, parse(key, value)?)?,
            "learning_rate" => self.learning_rate = positive(key, parse(key, value)?)?,
            "train_episodes" => self.train_episodes = at_least_one(key, parse(key, value)?)?,
            "train_horizon" => self.train_horizon = at_least_one(key, parse(key, value)?)?,
            "ablation_k" => self.ablation_k = parse_list(key, value)?,
            "execution" => {
                self.execution = match value {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    other => return Err(format!("unknown execution '{other}' (expected parallel|sequential)")),
                }
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                line: i + 1,
                message: "expected 'key = value'".into(),
            })?;
            self.set(key.trim(), value)
                .map_err(|message| CliError::Config { line: i + 1, message })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut config = RunConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    /// Reads a file; relative `cmdp_file` and `kernels_file` paths are
    /// resolved against the file's directory.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let before = (self.cmdp_file.clone(), self.kernels_file.clone());
        self.apply_text(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (slot, old) in [(&mut self.cmdp_file, before.0), (&mut self.kernels_file, before.1)] {
            let changed = *slot != old;
            if let Some(p) = slot {
                if changed && p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(())
    }

    /// Demo parameters for one seed.
    pub fn demo_params(&self, seed: u64) -> DemoParams {
        DemoParams {
            grid: self.grid,
            dynamics: self.dynamics,
            dt: self.dt,
            gamma: self.gamma.unwrap_or(0.95),
            k: self.k,
            eps_base: self.eps_base,
            samples: self.samples,
            densities: self.densities.clone(),
            density_mass: self.density_mass,
            multiplier: self.multiplier,
            tol: self.tol,
            max_iter: self.max_iter,
            episodes: self.episodes,
            horizon: self.horizon,
            test_level: self.test_level,
            seed,
            execution: self.execution,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let c = RunConfig::from_text("# run\nk = 4   # levels\neps_base=0.3\nseeds = 1, 2\n\noperator = minmax\n").unwrap();
        assert_eq!(c.k, 4);
        assert_eq!(c.eps_base, 0.3);
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.operator, OperatorKind::MinMax);
    }

    #[test]
    fn reports_bad_lines() {
        match RunConfig::from_text("k = 4\nnonsense\n") {
            Err(CliError::Config { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(RunConfig::from_text("k = 0"), Err(CliError::Config { line: 1, .. })));
        assert!(matches!(RunConfig::from_text("color = red"), Err(CliError::Config { .. })));
    }

    #[test]
    fn demo_config_parses_and_matches_demo_defaults() {
        let c = RunConfig::from_text(DEMO_CONFIG).unwrap();
        let p = c.demo_params(0);
        assert_eq!(p, DemoParams::default());
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = RunConfig::default();
        for key in KEYS {
            let value = match *key {
                "env" => "toy",
                "operator" => "fuzzy",
                "dynamics" => "standard",
                "density_mode" => "tabular",
                "execution" => "sequential",
                "seeds" | "ablation_k" | "densities" => "1,2",
                "cmdp_file" | "kernels_file" | "out_dir" => "x",
                _ => "1",
            };
            c.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
