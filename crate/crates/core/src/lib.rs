//! Stochastic gradient methods (SGD, SVRG) and Landweber iteration for
//! discretized linear inverse problems, with the tooling to measure and
//! predict their regularizing behaviour.

pub mod analysis;
pub mod error;
pub mod linalg;
pub mod problems;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
pub use linalg::{DesignMatrix, GramOperator};
pub use problems::{InstanceBundle, NoisyData, ProblemInstance, ProblemKind};
pub use solvers::{CheckpointPlan, Method, SolverConfig, Trajectory};
