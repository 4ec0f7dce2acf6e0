//! File formats, configuration, checkpoints and pipeline stages around
//! `xmmr-core`. The `xmmr` binary is a thin wrapper over [`pipeline`].

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod formats;
pub mod ingest;
pub mod pipeline;
pub mod synth;

pub use error::{CliError, Result};
