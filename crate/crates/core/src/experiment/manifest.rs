use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::{sha256_file, write_atomic};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Diverged { detail: String },
    Failed { detail: String },
}

/// A file written by a stage, relative to the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub kind: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    pub artifacts: Vec<Artifact>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// The single index of everything in a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub name: String,
    pub config: serde_json::Value,
    /// Keyed by verb (`synth`, `train`, ...).
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(name: &str, config: serde_json::Value) -> Self {
        Self {
            format_version: 1,
            name: name.to_string(),
            config,
            stages: BTreeMap::new(),
        }
    }

    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join(MANIFEST_FILE)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = Self::path(run_dir);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn load_or_new(run_dir: &Path, name: &str, config: serde_json::Value) -> Result<Self> {
        if Self::path(run_dir).exists() {
            Self::load(run_dir)
        } else {
            Ok(Self::new(name, config))
        }
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_atomic(&Self::path(run_dir), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn stage(&self, verb: &str) -> Option<&StageRecord> {
        self.stages.get(verb)
    }

    /// Every artifact of every stage, run-relative.
    pub fn artifacts(&self) -> impl Iterator<Item = &Artifact> {
        self.stages.values().flat_map(|s| &s.artifacts)
    }

    /// Re-hashes every artifact and reports the ones that changed.
    pub fn verify(&self, run_dir: &Path) -> Result<Vec<PathBuf>> {
        let mut changed = Vec::new();
        for a in self.artifacts() {
            if sha256_file(&run_dir.join(&a.path))? != a.sha256 {
                changed.push(a.path.clone());
            }
        }
        Ok(changed)
    }
}

/// Collects artifacts while a stage runs.
#[derive(Debug)]
pub struct ArtifactLog<'a> {
    run_dir: &'a Path,
    pub artifacts: Vec<Artifact>,
}

impl<'a> ArtifactLog<'a> {
    pub fn new(run_dir: &'a Path) -> Self {
        Self {
            run_dir,
            artifacts: Vec::new(),
        }
    }

    /// Records `path` (absolute or run-relative) with its content hash.
    pub fn add(&mut self, path: &Path, kind: &str) -> Result<()> {
        let rel = path.strip_prefix(self.run_dir).unwrap_or(path).to_path_buf();
        let sha256 = sha256_file(&self.run_dir.join(&rel))?;
        self.artifacts.push(Artifact {
            path: rel,
            kind: kind.to_string(),
            sha256,
        });
        Ok(())
    }
}
