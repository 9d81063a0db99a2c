//! Configuration and experiment runners behind the `trialoffer` binary.

pub mod config;
pub mod experiment;

pub use config::{validate_config, ExperimentConfig, ExperimentKind, MarketSource, RankingChoice};
pub use experiment::{run_experiment, write_outputs, OutputFile};
