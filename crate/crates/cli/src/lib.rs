//! Batch runner for the elevator pipeline: run configs, latent files,
//! frame renders and reproducible manifests.

pub mod config;
pub mod error;
pub mod latent_io;
pub mod manifest;
pub mod render;
pub mod runner;

pub use config::{parse_seeds, Mode, RunConfig};
pub use error::{CliError, Result};
pub use manifest::RunManifest;
pub use runner::{replay, run, ReplayReport, RunOptions};
