//! Artifact paths under the output directory.

use std::path::{Path, PathBuf};

use scenecov::scene::DatasetRole;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    map: Option<PathBuf>,
    ref_scenes: Option<PathBuf>,
    test_scenes: Option<PathBuf>,
}

pub fn role_dir(role: DatasetRole) -> &'static str {
    match role {
        DatasetRole::Ref => "ref",
        DatasetRole::Test => "test",
    }
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.out.clone(),
            map: cfg.inputs.map.clone(),
            ref_scenes: cfg.inputs.ref_scenes.clone(),
            test_scenes: cfg.inputs.test_scenes.clone(),
        }
    }

    pub fn map(&self) -> PathBuf {
        self.map
            .clone()
            .unwrap_or_else(|| self.root.join("map.json"))
    }

    pub fn scenes(&self, role: DatasetRole) -> PathBuf {
        let given = match role {
            DatasetRole::Ref => &self.ref_scenes,
            DatasetRole::Test => &self.test_scenes,
        };
        given
            .clone()
            .unwrap_or_else(|| self.role_file(role, "scenes.json"))
    }

    pub fn role_file(&self, role: DatasetRole, name: &str) -> PathBuf {
        self.root.join(role_dir(role)).join(name)
    }

    pub fn labels(&self, role: DatasetRole) -> PathBuf {
        self.role_file(role, "labels.json")
    }

    pub fn graphs(&self, role: DatasetRole) -> PathBuf {
        self.role_file(role, "graphs.jsonl")
    }

    pub fn graph_stats(&self, role: DatasetRole) -> PathBuf {
        self.role_file(role, "graph_stats.csv")
    }

    pub fn coverage(&self, role: DatasetRole) -> PathBuf {
        self.role_file(role, "coverage.json")
    }

    pub fn coverage_csv(&self, role: DatasetRole) -> PathBuf {
        self.role_file(role, "coverage.csv")
    }

    pub fn embeddings(&self, role: DatasetRole) -> PathBuf {
        self.role_file(role, "embeddings.csv")
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model").join("checkpoint.json")
    }
}

/// Fails with a pointer at `producer` when `path` does not exist.
pub fn require(path: &Path, producer: &'static str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path, producer))
    }
}
