//! λ-fuzzy measures, Choquet aggregation and fuzzy Bellman operators for
//! robust constrained dynamic programming on finite CMDPs.
//!
//! The crate is organised bottom-up:
//!
//! * [`measure`]: Sugeno λ-measures, their duals and cores.
//! * [`choquet`]: discrete Choquet integrals.
//! * [`cmdp`]: tabular constrained MDPs, a text format and the double integrator.
//! * [`uncertainty`]: stratified perturbation levels and level-value tables.
//! * [`bellman`]: nominal, fuzzy and min-max backups and value iteration.
//! * [`lagrangian`]: policy evaluation, the primal-dual loop and the robust equivalence harness.
//! * [`learner`]: trainable density models.
//! * [`random`]: random instance generators used by tests and benches.

pub mod bellman;
pub mod choquet;
pub mod cmdp;
pub mod exec;
pub mod lagrangian;
pub mod learner;
pub mod measure;
pub mod random;
pub mod uncertainty;

pub use bellman::{Aggregation, BellmanError, BellmanOperator, IterationTrace, Measures, Payoff, Policy, ValueFunction};
pub use choquet::{choquet_integral, dual_choquet_integral, ChoquetError};
pub use cmdp::{CmdpError, CmdpParts, TabularCmdp};
pub use exec::Execution;
pub use measure::{FuzzyMeasure, MeasureError, SubsetMask};
pub use uncertainty::{LevelSource, LevelTable, UncertaintyLevels};
