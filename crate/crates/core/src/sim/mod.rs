//! Monte Carlo comparison of allocation regimes.

pub mod config;
pub mod episode;
pub mod experiment;
pub mod metrics;
pub mod svg;

pub use config::ExperimentConfig;
pub use episode::{compute_schedule, simulate, EpisodeTrace, Fleet, Schedule};
pub use experiment::{plot_csv, plot_directory, run_experiment, write_outputs, ExperimentResult, RegimeResult};
