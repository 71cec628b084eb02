//! File formats, dataset IO and the `windvis` command line on top of
//! `windvis-core`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod format;
pub mod manifest;
pub mod report;

pub use error::{Error, Result};
