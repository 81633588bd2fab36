//! Config-driven experiments for learned nearest-neighbor decoders.

pub mod bounds;
pub mod config;
pub mod error;
pub mod experiment;
pub mod guide;
pub mod plot;

pub use config::ExperimentConfig;
pub use error::CliError;
