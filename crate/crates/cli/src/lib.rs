//! Experiment driver for the stochreg solvers: instance generation, single
//! runs, experiment grids, the preconditioning study and the verification
//! suite, with CSV/JSON output.

pub mod commands;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod output;
pub mod spec;
pub mod verify;

pub use error::{CliError, Result};
pub use experiment::{run_experiment, run_precondition_study, ResultRow};
pub use spec::ExperimentSpec;
