//! Experiment front-end for the regret laboratory.

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{parse_cases, parse_horizons, ExperimentConfig, TraceMode};
pub use experiment::{run, RunReport};
