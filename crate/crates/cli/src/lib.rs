//! Experiment harness for `kls-core`: configuration parsing, seeding and
//! reproducible output files.

pub mod config;
pub mod run;

pub use config::{parse_config, Command, ConfigError, ConfigErrors, ExperimentConfig};
pub use run::{config_hash, output_stem, run_experiment, RunError, RunReport};
