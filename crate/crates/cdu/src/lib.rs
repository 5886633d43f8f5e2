//! File formats, experiment orchestration and the command line for the
//! `cdu-core` unlearning library.

pub mod artifact;
pub mod cli;
pub mod config;
pub mod csvio;
pub mod digits;
pub mod error;
pub mod harness;
pub mod report;

pub use error::{Error, Result};
