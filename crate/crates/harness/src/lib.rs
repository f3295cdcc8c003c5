//! Experiment harness for `perfopt`: TOML configs, dataset generation and
//! CSV ingestion, seeded multi-run execution with CSV/SVG output, sweeps,
//! and the theory and oracle reports behind the `perfopt` binary.

pub mod check;
pub mod config;
pub mod data;
pub mod error;
pub mod oracle;
pub mod output;
pub mod run;
pub mod sweep;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use run::{execute_seed, run_experiment, RunManifest, SeedResult};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/experiments.md")]
mod book_experiments {}
