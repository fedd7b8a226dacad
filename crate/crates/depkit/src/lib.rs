//! File formats, run caching, experiment orchestration and the command line
//! on top of `depkit-core`.
//!
//! The `depkit` binary exposes one verb per pipeline stage (`ingest`,
//! `baseline`, `finetune`, `transfer`, `fuse`, `evaluate`, `report`,
//! `gridsearch`); [`cli::dispatch`] runs a parsed invocation.

pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod run;

pub use depkit_core as core;
pub use error::{Error, ErrorKind, Result};
