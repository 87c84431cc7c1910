//! Experiment harness for the `cael-core` estimators: configuration,
//! parallel trials and sweeps, Open Bandit Dataset ingestion, CSV and SVG
//! output, and the `cael-mips` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod obd;
pub mod output;
pub mod surrogate;

pub use config::{ExperimentConfig, ObdConfig, Preset, SweepParam, SweepSpec};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentResult, PointResult};
