//! Configuration-driven experiments for the tree tensor network integrator:
//! transverse-field Ising dynamics, tree comparisons and self-checks.

pub mod checks;
pub mod compare;
pub mod config;
pub mod error;
pub mod run;

pub use compare::{compare_trees, CompareTable};
pub use config::RunConfig;
pub use error::{Result, SimError};
pub use run::{run, run_with, RunOutput, Row, Summary};
