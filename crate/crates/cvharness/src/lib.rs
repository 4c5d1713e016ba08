//! Filesystem, configuration and command-line layer over `cvharness-core`.

pub mod artifacts;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod pipeline;
pub mod ppm;
pub mod report;

pub use cvharness_core as core;
pub use error::{HarnessError, Result};
