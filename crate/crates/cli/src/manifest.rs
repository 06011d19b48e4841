//! Run directory layout and per-command provenance manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, StageSeeds};
use crate::error::CliError;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Where timestamps come from. `Fixed` makes manifests reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(u64),
}

impl Clock {
    /// `SOURCE_DATE_EPOCH` when set, the system clock otherwise.
    pub fn from_env() -> Self {
        std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .map_or(Clock::System, Clock::Fixed)
    }

    pub fn now(self) -> u64 {
        match self {
            Clock::Fixed(t) => t,
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn policy(&self, role: &str) -> PathBuf {
        self.root.join("policies").join(format!("{role}.json"))
    }

    pub fn training_curve(&self, role: &str) -> PathBuf {
        self.root.join("curves").join(format!("{role}.csv"))
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }

    pub fn train_summary(&self) -> PathBuf {
        self.root.join("train_summary.json")
    }

    pub fn method_dir(&self, method: &str) -> PathBuf {
        self.root.join("coordinate").join(method)
    }

    pub fn eval_dir(&self, name: &str) -> PathBuf {
        self.root.join("evaluate").join(name)
    }

    pub fn oracle_dir(&self) -> PathBuf {
        self.root.join("oracle")
    }

    pub fn diagnose_dir(&self) -> PathBuf {
        self.root.join("diagnose")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }

    /// Fails with a pointer to the producing command when `path` is absent.
    pub fn require(&self, path: PathBuf, producer: &'static str) -> Result<PathBuf, CliError> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact { path, producer })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config_path: String,
    pub seeds: StageSeeds,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub timestamps: Timestamps,
    pub code_version: String,
}

impl RunManifest {
    /// Checks that every artifact exists, then writes the manifest.
    pub fn write(
        layout: &RunLayout,
        command: &str,
        cfg: &ExperimentConfig,
        artifacts: &[PathBuf],
        started: u64,
        clock: Clock,
    ) -> Result<RunManifest, CliError> {
        let mut rel = Vec::with_capacity(artifacts.len());
        for path in artifacts {
            let path = layout.require(path.clone(), "the same command")?;
            rel.push(relative(&layout.root, &path));
        }
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash: cfg.hash(),
            config_path: relative(&layout.root, &layout.config()),
            seeds: cfg.seeds(),
            artifacts: rel,
            timestamps: Timestamps {
                started_unix: started,
                finished_unix: clock.now(),
            },
            code_version: CODE_VERSION.to_string(),
        };
        write_json(&layout.manifest(command), &manifest)?;
        Ok(manifest)
    }
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    ensure_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_existing_artifacts_only() {
        let dir = tempfile::tempdir().unwrap();
        let layout = RunLayout::new(dir.path());
        let cfg = ExperimentConfig::default_config();
        write_json(&layout.config(), &cfg).unwrap();
        let a = layout.stats();
        write_bytes(&a, b"{}").unwrap();
        let m = RunManifest::write(&layout, "train", &cfg, &[a], 5, Clock::Fixed(7)).unwrap();
        assert_eq!(m.artifacts, vec!["stats.json"]);
        assert_eq!(m.timestamps.finished_unix, 7);
        assert_eq!(m.config_hash, cfg.hash());
        let back: RunManifest = read_json(&layout.manifest("train")).unwrap();
        assert_eq!(back, m);

        let missing = layout.train_summary();
        assert!(matches!(
            RunManifest::write(&layout, "train", &cfg, &[missing], 5, Clock::Fixed(7)),
            Err(CliError::MissingArtifact { .. })
        ));
    }
}
