use std::path::{Path, PathBuf};

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config {
        key: String,
        message: String,
        line: Option<usize>,
    },
    #[error("missing artifact {}: run `{producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] yrc_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Io { .. } => "io",
            CliError::UnknownMethod(_) => "unknown_method",
            CliError::Json { .. } => "json",
            CliError::Core(_) => "core",
        }
    }

    /// One-line JSON object for the error stream.
    pub fn machine_line(&self) -> String {
        let mut obj = json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            CliError::Config { key, line, .. } => {
                obj["key"] = json!(key);
                if let Some(l) = line {
                    obj["line"] = json!(l);
                }
            }
            CliError::MissingArtifact { path, .. } | CliError::Io { path, .. } | CliError::Json { path, .. } => {
                obj["path"] = json!(path.display().to_string());
            }
            _ => {}
        }
        obj.to_string()
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::UnknownMethod(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            _ => 1,
        }
    }
}
