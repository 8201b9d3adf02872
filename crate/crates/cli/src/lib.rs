//! Command-line driver for the she-core toolkit: manifest parsing, output
//! management and the acceptance suite.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod output;
pub mod verify;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
