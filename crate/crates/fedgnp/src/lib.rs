//! Experiment harness for the `fedgnp-core` simulator: JSON configuration,
//! sweeps with per-cell CSV output, reports and the on-disk formats used by
//! the `fedgnp` command line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod report;
pub mod sweep;

pub use error::{HarnessError, Result};
