//! Command implementations behind the `aerotree` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{Paths, PipelineConfig};
pub use error::{CliError, Result};
