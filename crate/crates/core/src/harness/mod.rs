//! Experiment harness: JSON configs in, CSV and SVG artifacts out.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod svg;
pub mod table;

pub use cli::cli_main;
pub use config::{ExperimentConfig, ExperimentKind, ProblemKind, SolverName, SolverSpec};
pub use experiments::{run, Cell, GridCell, RunOptions, RunOutput};
