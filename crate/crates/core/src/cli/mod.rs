//! Batch front end: config parsing, result tables and the command bodies
//! behind the `hetnet` binary.

pub mod commands;
pub mod config;
pub mod table;

pub use commands::{cmd_analytic, cmd_optimize, cmd_simulate, cmd_sweep, CommandError, CommandOutput, Status};
pub use config::{parse_config, ConfigError, ScenarioConfig};
pub use table::{ResultTable, Value};
