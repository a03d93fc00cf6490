//! Files, commands and experiment plumbing around `pearl-core`.

pub mod artifacts;
pub mod binary;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod llm;
pub mod pipeline;
pub mod report;

pub use config::{RunConfig, Variant};
pub use error::{Error, Result};
