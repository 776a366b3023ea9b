//! Configuration and subcommands of the `tapgen` pipeline driver.

pub mod commands;
pub mod config;

pub use commands::{cmd_ensemble, cmd_eval, cmd_infer, cmd_synth, cmd_train, DatasetLayout};
pub use config::{PipelineConfig, Preset};
