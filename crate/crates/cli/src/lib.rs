//! Configuration, orchestration and report emission for the exit-set lab.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use experiments::{run_experiment, TAGS};
pub use report::Report;
