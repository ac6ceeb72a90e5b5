//! Library surface of the command-line runner, split out so integration
//! tests can drive the commands directly.

pub mod commands;
pub mod manifest;
pub mod plot;

pub use commands::{cmd_props, cmd_prop1, cmd_report, cmd_train, CliError, RunConfig};
