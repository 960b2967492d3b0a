use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use choquet_dp_cli::commands;
use choquet_dp_cli::config::{RunConfig, DEMO_CONFIG};
use choquet_dp_cli::CliError;

#[derive(Parser)]
#[command(name = "choquet-dp", version, about = "Fuzzy-measure robust constrained dynamic programming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value iteration; writes residuals.csv and values.csv.
    Vi(RunArgs),
    /// Fuzzy vs min-max vs nominal on the double integrator; writes demo.csv.
    DemoDi(RunArgs),
    /// Fuzzy demo over seeds and level counts; writes ablation.csv.
    Ablation(RunArgs),
    /// Primal-dual training with learned densities; writes train.csv.
    Train(RunArgs),
    /// Fuzzy vs robust equivalence check; writes equiv.txt and equiv.csv.
    Equiv(RunArgs),
    /// Prints λ, subset measures, duals and optionally the core.
    Measure {
        /// Comma-separated densities, e.g. 0.3,0.3
        densities: String,
        /// Also list the core extreme points (K ≤ 8).
        #[arg(long)]
        core: bool,
    },
}

/// Options shared by the run commands. Every flag maps to the config key of
/// the same name (dashes become underscores) and overrides the file.
#[derive(Args)]
struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for value sweeps; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    cmdp_file: Option<String>,
    #[arg(long)]
    kernels_file: Option<String>,
    #[arg(long)]
    operator: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    eps_base: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    dynamics: Option<String>,
    #[arg(long)]
    density_mode: Option<String>,
    #[arg(long)]
    densities: Option<String>,
    #[arg(long)]
    multiplier: Option<String>,
    #[arg(long)]
    episodes: Option<String>,
    #[arg(long)]
    test_level: Option<String>,
    #[arg(long)]
    ablation_k: Option<String>,
    #[arg(long)]
    execution: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let flags: [(&'static str, &Option<String>); 24] = [
            ("env", &self.env),
            ("cmdp_file", &self.cmdp_file),
            ("kernels_file", &self.kernels_file),
            ("operator", &self.operator),
            ("k", &self.k),
            ("eps_base", &self.eps_base),
            ("samples", &self.samples),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
            ("gamma", &self.gamma),
            ("budget", &self.budget),
            ("alpha", &self.alpha),
            ("tol", &self.tol),
            ("max_iter", &self.max_iter),
            ("iters", &self.iters),
            ("dynamics", &self.dynamics),
            ("density_mode", &self.density_mode),
            ("densities", &self.densities),
            ("multiplier", &self.multiplier),
            ("episodes", &self.episodes),
            ("test_level", &self.test_level),
            ("ablation_k", &self.ablation_k),
            ("execution", &self.execution),
            ("out_dir", &self.out_dir),
        ];
        flags
            .into_iter()
            .filter_map(|(key, value)| value.as_deref().map(|v| (key, v)))
            .collect()
    }

    fn resolve(&self, base: Option<&str>) -> Result<RunConfig, CliError> {
        let mut config = match base {
            Some(text) => RunConfig::from_text(text)?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        for (key, value) in self.overrides() {
            config
                .set(key, value)
                .map_err(|e| CliError::Usage(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{pair}'")))?;
            config
                .set(key.trim(), value)
                .map_err(|e| CliError::Usage(format!("--set {pair}: {e}")))?;
        }
        Ok(config)
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    Ok(())
}

fn parse_densities(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| CliError::Usage(format!("'{t}' is not a density")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let run_with = |args: &RunArgs, base: Option<&str>, f: fn(&RunConfig) -> Result<i32, CliError>| {
        configure_threads(args.threads)?;
        f(&args.resolve(base)?)
    };
    match cli.command {
        Command::Vi(args) => run_with(&args, None, commands::cmd_vi),
        Command::DemoDi(args) => run_with(&args, Some(DEMO_CONFIG), commands::cmd_demo_di),
        Command::Ablation(args) => run_with(&args, Some(DEMO_CONFIG), commands::cmd_ablation),
        Command::Train(args) => run_with(&args, None, commands::cmd_train),
        Command::Equiv(args) => run_with(&args, None, commands::cmd_equiv),
        Command::Measure { densities, core } => commands::cmd_measure(&parse_densities(&densities)?, core),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
