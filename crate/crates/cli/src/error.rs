use std::path::{Path, PathBuf};

use serde_json::json;

/// Failure of a CLI command, mapped to an exit code and a JSON report.
#[derive(Debug)]
pub enum CliError {
    /// Bad flag, config field or argument value.
    Usage {
        message: String,
        field: Option<String>,
    },
    /// An input that an earlier command should have written is absent.
    MissingArtifact {
        path: PathBuf,
        producer: &'static str,
    },
    Core(scenecov::Error),
    Internal(String),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage {
            message: message.into(),
            field: None,
        }
    }

    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Usage {
            message: message.into(),
            field: Some(field.into()),
        }
    }

    pub fn missing(path: &Path, producer: &'static str) -> Self {
        CliError::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 2,
            CliError::Core(scenecov::Error::Shape(_)) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage { .. } => "usage",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Core(_) => "input",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn to_json(&self, command: &str) -> serde_json::Value {
        let mut v = json!({
            "status": "error",
            "command": command,
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            CliError::Usage { field: Some(f), .. } => v["field"] = json!(f),
            CliError::MissingArtifact { path, producer } => {
                v["path"] = json!(path.display().to_string());
                v["producer"] = json!(producer);
            }
            _ => {}
        }
        v
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage {
                message,
                field: Some(field),
            } => write!(f, "{field}: {message}"),
            CliError::Usage {
                message,
                field: None,
            } => f.write_str(message),
            CliError::MissingArtifact { path, producer } => {
                write!(
                    f,
                    "missing {}; run `scenecov {producer}` first",
                    path.display()
                )
            }
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<scenecov::Error> for CliError {
    fn from(e: scenecov::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Internal(format!("csv: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
