//! Seeded Monte Carlo experiments, certification reports and file formats
//! on top of [`privsel_core`].

pub mod certify;
pub mod config;
pub mod equal_budget;
pub mod error;
pub mod formats;
pub mod harness;

pub use config::{ExperimentConfig, InstanceSpec, OutputSpec};
pub use error::{Error, Result};
pub use harness::{run_experiment, run_trials, summarize, ExperimentSummary, MechanismSummary, TrialRecord};
