//! Command-line driver and review service.

pub mod commands;
pub mod service;

pub use commands::{run, Cli};
