//! Command-line harness: benchmark generation, training, evaluation,
//! stability certification and gradient audits.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use error::{exit, CliError};
