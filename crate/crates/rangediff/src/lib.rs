//! File formats, experiment configuration and the command implementations
//! behind the `rangediff` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{Error, Result};
