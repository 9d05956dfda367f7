//! Config-driven experiment runner for the `podscale` simulator.
//!
//! A run reads one JSON config, executes the named experiment and writes
//! JSON-lines / CSV reports into an output directory.

pub mod config;
pub mod error;
pub mod experiments;
pub mod parallel;
pub mod report;

pub use config::{load_config, parse_config, Experiment, ExperimentConfig};
pub use error::{CliError, Result};
pub use experiments::{run_experiment, RunOptions, RunOutcome};
