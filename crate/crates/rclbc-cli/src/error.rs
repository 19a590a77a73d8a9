//! Error taxonomy mapped onto process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("training diverged: {msg} (last good state saved to {checkpoint})")]
    Diverged { msg: String, checkpoint: String },
    #[error("corrupt model file {path}: {msg}")]
    CorruptModel { path: String, msg: String },
    #[error("invalid export: {0}")]
    InvalidExport(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn corrupt(path: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::CorruptModel { path: path.into(), msg: msg.into() }
    }

    /// 0 ok, 2 config error, 3 training divergence, 4 corrupt model, 5 invalid export.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged { .. } => 3,
            CliError::CorruptModel { .. } => 4,
            CliError::InvalidExport(_) => 5,
        }
    }
}
