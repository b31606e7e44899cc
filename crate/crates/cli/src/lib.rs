//! Experiment front end for the gated LTI models.
//!
//! The binary (`expcli`) parses arguments and prints; everything it does
//! lives here as plain functions over [`config::ExperimentConfig`] and
//! friends, so integration tests and the study suites drive the exact same
//! code paths in process.

pub mod bench;
pub mod config;
pub mod fmt;
pub mod presets;
pub mod runs;

pub use config::{ExperimentConfig, OUTPUT_ROOT_VAR};
