//! Configuration, commands and plot output behind the `spikemem` binary.
pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
