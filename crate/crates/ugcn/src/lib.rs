//! File formats, experiment pipelines and the `ugcn` command-line tool built
//! on `ugcn-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
