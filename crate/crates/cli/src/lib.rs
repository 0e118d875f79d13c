//! Command-line pipelines: configuration, simulation, streaming, analysis
//! and plot-data export, plus the desk-scale reproduction report.

pub mod commands;
pub mod config;
pub mod criteria;
pub mod error;
pub mod output;
pub mod reproduce;

pub use error::{CliError, Result};
