//! Command-line front end for the granttrend pipeline.

pub mod commands;
pub mod config;
pub mod serve;

pub use commands::{CliError, DataDir, ErrorKind, QueryFormat};
pub use config::{Overrides, Settings};
