//! Batch harness for dual-metric stereotype bias evaluation of
//! chat-completion models: dataset IO, provider access, resumable runs and
//! report emission on top of `dmba-core`.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod gateway;
pub mod orchestrator;
pub mod plots;
pub mod report;

pub use error::{Error, Result};
