//! Pipeline configuration, read from one TOML file.

use std::path::{Path, PathBuf};

use enteroseg_core::nets::{BinaryNetConfig, CoarseNetConfig};
use enteroseg_core::train::TrainConfig;
use enteroseg_imaging::augment::AugmentationSpec;
use enteroseg_imaging::metrics::EvalMode;
use enteroseg_imaging::volume::MAX_LABEL;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};
use crate::phantom::PhantomSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub folds: FoldsConfig,
    pub coarse: CoarseConfig,
    pub organ: OrganConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of `<patient>/image.nii[.gz]` + `<patient>/labels.nii[.gz]`.
    /// Defaults to `<out>/raw`, where `phantom` writes.
    #[serde(default)]
    pub raw_root: Option<PathBuf>,
    /// Names of labels `1..=n`.
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldsConfig {
    pub k: usize,
}

impl Default for FoldsConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// Optional overrides on top of a stage's default training settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub scheduler_factor: Option<f64>,
    pub scheduler_patience: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, mut base: TrainConfig, seed: u64) -> TrainConfig {
        base.seed = seed;
        if let Some(v) = self.lr {
            base.lr = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            base.max_epochs = v;
        }
        if let Some(v) = self.early_stop_patience {
            base.early_stop_patience = v;
        }
        if let Some(v) = self.scheduler_factor {
            base.scheduler_factor = v;
        }
        if let Some(v) = self.scheduler_patience {
            base.scheduler_patience = v;
        }
        base
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightBase {
    #[default]
    InverseFrequency,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingConfig {
    #[serde(default)]
    pub base: WeightBase,
    /// Class name whose weight is multiplied by `boost_factor`.
    #[serde(default)]
    pub boost_class: Option<String>,
    #[serde(default = "default_boost")]
    pub boost_factor: f64,
}

fn default_boost() -> f64 {
    7.0
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self { base: WeightBase::InverseFrequency, boost_class: None, boost_factor: default_boost() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseConfig {
    pub net: CoarseNetConfig,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub weighting: WeightingConfig,
    #[serde(default)]
    pub augment: Option<AugmentationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganConfig {
    /// Patch size is `net.input_size` squared.
    pub net: BinaryNetConfig,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default = "default_pad")]
    pub pad: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub augment: Option<AugmentationSpec>,
    /// Train the per-class models on parallel threads.
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_pad() -> usize {
    enteroseg_imaging::roi::DEFAULT_PAD
}

fn default_threshold() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub mode: EvalMode,
}

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Phantom,
    Convert,
    Split,
    Coarse,
    Roi,
    Organ,
    Evaluate,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading config {}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn n_classes(&self) -> usize {
        self.data.classes.len()
    }

    /// Label of a class name (1-based).
    pub fn class_label(&self, name: &str) -> Result<u8> {
        self.data
            .classes
            .iter()
            .position(|c| c == name)
            .map(|i| i as u8 + 1)
            .ok_or_else(|| Error::Invalid(format!("unknown class `{name}`; configured classes are {:?}", self.data.classes)))
    }

    pub fn raw_root(&self, out: &Path) -> PathBuf {
        self.data.raw_root.clone().unwrap_or_else(|| out.join("raw"))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_classes();
        if n == 0 || n > MAX_LABEL as usize {
            return Err(Error::Config(format!("data.classes must list 1..=10 names, got {n}")));
        }
        let mut names = self.data.classes.clone();
        names.sort();
        names.dedup();
        if names.len() != n {
            return Err(Error::Config("data.classes contains duplicates".into()));
        }
        if let Some(bad) = self.data.classes.iter().find(|c| c.is_empty() || c.contains(['/', '\\'])) {
            return Err(Error::Config(format!("class name `{bad}` is not usable as a directory name")));
        }
        if self.coarse.net.n_classes != n + 1 {
            return Err(Error::Config(format!(
                "coarse.net.n_classes = {} but data.classes implies {} (background + {n})",
                self.coarse.net.n_classes,
                n + 1
            )));
        }
        if self.coarse.net.encoder.in_channels != 1 || self.organ.net.encoder.in_channels != 1 {
            return Err(Error::Config("networks take single-channel input".into()));
        }
        self.coarse.net.encoder.validate(self.coarse.net.input_size)?;
        self.organ.net.encoder.validate(self.organ.net.input_size)?;
        if self.organ.net.q_order == 0 {
            return Err(Error::Config("organ.net.q_order must be >= 1".into()));
        }
        if self.folds.k < 2 {
            return Err(Error::Config("folds.k must be >= 2".into()));
        }
        if let Some(b) = &self.coarse.weighting.boost_class {
            self.class_label(b).map_err(|e| Error::Config(format!("coarse.weighting.boost_class: {e}")))?;
        }
        if !(self.coarse.weighting.boost_factor > 0.0) {
            return Err(Error::Config("coarse.weighting.boost_factor must be positive".into()));
        }
        if !(self.organ.threshold > 0.0 && self.organ.threshold < 1.0) {
            return Err(Error::Config("organ.threshold must be in (0, 1)".into()));
        }
        for a in [&self.coarse.augment, &self.organ.augment].into_iter().flatten() {
            a.validate()?;
        }
        self.coarse_train(0).validate()?;
        self.organ_train(0).validate()?;
        if let Some(p) = &self.phantom {
            p.validate()?;
            let names: Vec<&String> = p.organs.iter().map(|o| &o.name).collect();
            if names != self.data.classes.iter().collect::<Vec<_>>() {
                return Err(Error::Config(format!("phantom organs {names:?} must match data.classes {:?}", self.data.classes)));
            }
        }
        Ok(())
    }

    pub fn coarse_train(&self, fold: usize) -> TrainConfig {
        self.coarse.train.apply(TrainConfig::coarse(), self.seed.wrapping_add(1000 * fold as u64 + 1))
    }

    pub fn organ_train(&self, fold: usize) -> TrainConfig {
        self.organ.train.apply(TrainConfig::organ(), self.seed.wrapping_add(1000 * fold as u64 + 500))
    }

    /// Hash of the config sections a stage's outputs depend on.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let mut parts = vec![serde_json::json!({ "seed": self.seed, "phantom": self.phantom })];
        if stage >= Stage::Convert {
            parts.push(serde_json::json!({ "data": self.data }));
        }
        if stage >= Stage::Split {
            parts.push(serde_json::json!({ "folds": self.folds }));
        }
        if stage >= Stage::Coarse {
            parts.push(serde_json::json!({ "coarse": self.coarse }));
        }
        if stage >= Stage::Roi {
            parts.push(serde_json::json!({ "pad": self.organ.pad, "target": self.organ.net.input_size }));
        }
        if stage >= Stage::Organ {
            parts.push(serde_json::json!({ "organ": self.organ }));
        }
        if stage >= Stage::Evaluate {
            parts.push(serde_json::json!({ "eval": self.eval }));
        }
        let bytes = serde_json::to_vec(&parts).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
