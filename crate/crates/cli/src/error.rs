use std::path::PathBuf;

use aeromine_core::{EngineError, JournalError, OracleError, Violation};
use aeromine_service::{RegistryError, ServeError};
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {}", join(.0))]
    Config(Vec<Violation>),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("cannot write CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("journals differ at line {line}")]
    JournalsDiffer { line: usize },
    #[error("{0}")]
    Runtime(String),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "invalid_config",
            CliError::Io { .. } => "io",
            CliError::Journal(_) => "journal",
            CliError::Engine(_) => "engine",
            CliError::Oracle(_) => "oracle",
            CliError::Registry(_) => "data_dir",
            CliError::Serve(_) => "serve",
            CliError::Csv(_) => "export",
            CliError::JournalsDiffer { .. } => "journals_differ",
            CliError::Runtime(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            _ => 1,
        }
    }

    /// `{"error":{"code":..,"message":..}}` on a single line. Config errors
    /// also carry every violation as `{subject, reason}`.
    pub fn to_json_line(&self) -> String {
        let mut error = json!({ "code": self.code(), "message": self.to_string() });
        match self {
            CliError::Config(v) => error["violations"] = json!(v),
            CliError::JournalsDiffer { line } => error["line"] = json!(line),
            _ => {}
        }
        json!({ "error": error }).to_string()
    }
}
