//! Experiment harness for `grl`: TOML configs, seeded parallel runs, CSV
//! output with metadata sidecars, sweeps, and the property suite.

pub mod config;
pub mod error;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::HarnessError;
pub use run::{run, RunOptions, RunRecord};
