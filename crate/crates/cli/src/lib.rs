//! Library side of the `cnf` command-line tool. Each subcommand is a plain
//! function taking an argument struct, so tests can drive it in-process.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod study;
pub mod svg;

pub use error::{CliError, CliResult};
