use std::io;

use bnfi::criteria::CriterionError;
use bnfi::engine::EngineError;
use bnfi::importance::ImportanceError;
use bnfi::ir::format::FormatError;
use bnfi::pruner::PruneError;
use bnfi::search::SearchError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("model: {0}")]
    Model(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Model(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<ImportanceError> for CliError {
    fn from(e: ImportanceError) -> Self {
        match e {
            ImportanceError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<CriterionError> for CliError {
    fn from(e: CriterionError) -> Self {
        match e {
            CriterionError::Importance(i) => i.into(),
            CriterionError::Unknown(_) | CriterionError::UnknownOrder(_) => CliError::Usage(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<PruneError> for CliError {
    fn from(e: PruneError) -> Self {
        match e {
            PruneError::Criterion(c) => c.into(),
            PruneError::RatioCount { .. } | PruneError::RatioRange(_) => CliError::Usage(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Diverged { .. } => CliError::Numeric(e.to_string()),
            EngineError::Config(m) => CliError::Usage(m),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Config(m) => CliError::Usage(m),
            SearchError::Prune(p) => p.into(),
            SearchError::Engine(en) => en.into(),
        }
    }
}
