//! Shared fixtures for the benchmarks.

use std::path::PathBuf;

use ncsim_core::sim::ExperimentConfig;

/// Loads one of the bundled experiment configurations by file name.
pub fn bundled_config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
