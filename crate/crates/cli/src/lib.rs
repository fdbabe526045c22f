//! Command-line driver: corpus synthesis, MFCC extraction, training runs
//! with checkpoints and resume, and cross-run reports.

pub mod commands;
pub mod config;
pub mod error;
#[doc(hidden)]
pub mod fuzzing;
pub mod lock;
pub mod metrics;

pub use config::RunConfig;
pub use error::{CliError, Result};
