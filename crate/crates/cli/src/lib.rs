//! Experiment runner: configuration, commands and CSV output.

pub mod commands;
pub mod config;
pub mod demo;

use thiserror::Error;

use choquet_dp::bellman::BellmanError;
use choquet_dp::cmdp::CmdpError;
use choquet_dp::lagrangian::LagrangianError;
use choquet_dp::learner::LearnerError;
use choquet_dp::measure::MeasureError;
use choquet_dp::uncertainty::UncertaintyError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Cmdp(#[from] CmdpError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Bellman(#[from] BellmanError),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("equivalence gap exceeds tolerance: {0}")]
    GapExceeded(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 success, 1 usage or parse errors, 2 non-convergence, 3 equivalence
    /// preconditions unmet, 4 equivalence gap, 5 guard violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::Io(_) => 1,
            CliError::Cmdp(CmdpError::Parse { .. } | CmdpError::Io(_)) => 1,
            CliError::Lagrangian(LagrangianError::Parse { .. } | LagrangianError::Io(_)) => 1,
            CliError::Learner(LearnerError::Checkpoint { .. } | LearnerError::Io(_)) => 1,
            CliError::NotConverged(_) => 2,
            CliError::Lagrangian(LagrangianError::EvaluationDiverged { .. }) => 2,
            CliError::Learner(LearnerError::Lagrangian(LagrangianError::EvaluationDiverged { .. })) => 2,
            CliError::Lagrangian(LagrangianError::ConditionsUnmet { .. }) => 3,
            CliError::GapExceeded(_) => 4,
            _ => 5,
        }
    }
}
