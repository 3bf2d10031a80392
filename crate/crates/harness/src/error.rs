use std::io;
use std::path::{Path, PathBuf};

use dmba_core::corpus::CorpusError;
use dmba_core::metrics::MetricsError;
use dmba_core::plan::PlanError;
use dmba_core::prompting::PromptError;
use dmba_core::request::ConfigError;
use dmba_core::scoring::ScoringError;

use crate::gateway::GatewayError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: invalid JSON at byte {offset}: {message}", path.display())]
    Json { path: PathBuf, offset: usize, message: String },
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("checkpoint {}: written for plan {found}, current plan is {expected}; refusing to resume", path.display())]
    CheckpointMismatch { path: PathBuf, expected: String, found: String },
    #[error("checkpoint {} is locked by another run", .0.display())]
    Locked(PathBuf),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        Error::Csv { path: path.to_path_buf(), source }
    }

    pub(crate) fn schema(path: &Path, message: impl Into<String>) -> Self {
        Error::Schema { path: path.to_path_buf(), message: message.into() }
    }

    /// Converts a serde_json error into a byte offset into `text`.
    pub(crate) fn json(path: &Path, text: &str, err: &serde_json::Error) -> Self {
        Error::Json { path: path.to_path_buf(), offset: byte_offset(text, err.line(), err.column()), message: err.to_string() }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let before: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (before + column.saturating_sub(1)).min(text.len())
}
