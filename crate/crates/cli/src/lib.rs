//! Library half of the `ecbound` command-line tool: config parsing,
//! subcommand execution and CSV output.

pub mod config;
pub mod run;

pub use config::{config_from_csv, echo, load_config, parse_config, ConfigError, EnsembleConfig, RunConfig};
pub use run::{run_command, Command, RunError, RunOptions};
