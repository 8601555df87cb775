//! Experiment harness behind the CLI: configuration, synthetic-data
//! generation, file formats, distribution checks, and the five experiment
//! drivers (contraction, selection, bvm-compare, prior-checks,
//! wishart-tails).

pub mod checks;
pub mod config;
pub mod experiments;
pub mod generate;
pub mod io;

pub use config::{replication_seed, DataSpec, ExperimentConfig, HyperSpec, Sigma0Spec};
pub use experiments::{run_experiment, ExperimentKind, RunReport};
pub use generate::{generate_data, GeneratedData};
