//! File formats, configuration and experiment driver for the `deskdiff` CLI.

pub mod config;
pub mod csvio;
pub mod error;
pub mod experiment;
pub mod svg;

pub use config::RunConfig;
pub use error::{LabError, Result};
