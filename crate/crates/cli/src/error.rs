use std::path::PathBuf;

use thiserror::Error;

/// Everything that stops a run before its checks are evaluated; exit status 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("cannot parse {}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },

    #[error("cannot write {}: {msg}", path.display())]
    Output { path: PathBuf, msg: String },

    #[error(transparent)]
    Core(#[from] paralab::Error),
}
