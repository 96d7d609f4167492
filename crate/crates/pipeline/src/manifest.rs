//! Artifact registry at the root of the output tree.
//!
//! Each stage records the files it produced with the hash of the config
//! sections they depend on. Downstream stages look their inputs up here and
//! refuse to run on missing or stale entries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Stage};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub config_hash: String,
    /// Paths relative to the output root.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub version: u32,
    /// Keys such as `dataset`, `folds`, `fold0/coarse`, `fold0/organ/stomach`.
    pub artifacts: BTreeMap<String, Artifact>,
}

pub fn key_dataset() -> String {
    "dataset".into()
}

pub fn key_raw() -> String {
    "raw".into()
}

pub fn key_folds() -> String {
    "folds".into()
}

pub fn key_coarse(fold: usize) -> String {
    format!("fold{fold}/coarse")
}

pub fn key_pred(fold: usize) -> String {
    format!("fold{fold}/pred")
}

pub fn key_roi(fold: usize, class: &str) -> String {
    format!("fold{fold}/roi/{class}")
}

pub fn key_organ(fold: usize, class: &str) -> String {
    format!("fold{fold}/organ/{class}")
}

pub fn key_eval(fold: usize) -> String {
    format!("fold{fold}/eval")
}

pub fn key_report() -> String {
    "report".into()
}

/// Command that produces the artifact behind `key`.
fn producer(key: &str) -> String {
    let fold = key.strip_prefix("fold").and_then(|r| r.split('/').next()).unwrap_or("N");
    let tail = key.split('/').nth(1).unwrap_or("");
    match (key, tail) {
        ("raw", _) => "enteroseg phantom --config <cfg> --out <dir>".into(),
        ("dataset", _) => "enteroseg convert --config <cfg> --out <dir>".into(),
        ("folds", _) => "enteroseg split --config <cfg> --out <dir>".into(),
        (_, "coarse") => format!("enteroseg train-coarse --fold {fold}"),
        (_, "pred") => format!("enteroseg predict-coarse --fold {fold}"),
        (_, "roi") => format!("enteroseg extract-roi --fold {fold}"),
        (_, "organ") => format!("enteroseg train-organ --fold {fold}"),
        (_, "eval") => format!("enteroseg evaluate --fold {fold}"),
        _ => "enteroseg report".into(),
    }
}

impl PipelineManifest {
    pub fn path(out: &Path) -> PathBuf {
        out.join(MANIFEST_FILE)
    }

    /// Load the manifest, or start an empty one if none exists yet.
    pub fn load_or_default(out: &Path) -> Result<Self> {
        let p = Self::path(out);
        if p.exists() {
            read_json(&p)
        } else {
            Ok(Self { version: 1, artifacts: BTreeMap::new() })
        }
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        write_json(&Self::path(out), self).map(|_| ())
    }

    pub fn record(&mut self, key: String, config_hash: String, files: Vec<String>) {
        self.artifacts.insert(key, Artifact { config_hash, files });
    }

    /// Look up an artifact and check that its files exist and that it was
    /// built from the current config.
    pub fn require(&self, out: &Path, key: &str, cfg: &PipelineConfig, stage: Stage) -> Result<&Artifact> {
        let hint = format!("run `{}` first", producer(key));
        let a = self
            .artifacts
            .get(key)
            .ok_or_else(|| Error::Missing { artifact: key.into(), hint: hint.clone() })?;
        if let Some(f) = a.files.iter().find(|f| !out.join(f).exists()) {
            return Err(Error::Missing { artifact: format!("{key} ({f})"), hint });
        }
        if a.config_hash != cfg.stage_hash(stage) {
            return Err(Error::Stale { artifact: key.into(), hint: format!("re-run `{}` with this config", producer(key)) });
        }
        Ok(a)
    }

    /// Check every recorded artifact's files exist.
    pub fn validate_files(&self, out: &Path) -> Result<()> {
        for (key, a) in &self.artifacts {
            if let Some(f) = a.files.iter().find(|f| !out.join(f).exists()) {
                return Err(Error::Missing { artifact: format!("{key} ({f})"), hint: format!("run `{}` again", producer(key)) });
            }
        }
        Ok(())
    }
}

/// Relative path string for a file under the output root.
pub fn rel(out: &Path, path: &Path) -> String {
    path.strip_prefix(out).unwrap_or(path).to_string_lossy().replace('\\', "/")
}
