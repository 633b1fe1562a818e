//! Experiment configuration and its JSON form.
//!
//! A config file is either a bare [`ExperimentConfig`] or a run manifest
//! that embeds one under `"config"`; the latter is how runs are replayed.

use std::fs;
use std::path::{Path, PathBuf};

use mialab_core::attacks::{AttackMethod, AttackMode, CanaryConfig, OfflineScore, CONFIDENCE_CLAMP, SIGMA_FLOOR};
use mialab_core::data::{Dataset, GaussianMixture};
use mialab_core::nn::{Activation, ArchDescriptor};
use mialab_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::ingest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        /// Defaults to `max(label) + 1`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
    IdxPair {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
    GaussianMixture(GaussianMixture),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Csv { path, num_classes } => ingest::ingest_csv(path, *num_classes),
            DatasetSource::IdxPair {
                images,
                labels,
                num_classes,
            } => ingest::ingest_idx_pair(images, labels, *num_classes),
            DatasetSource::GaussianMixture(g) => Ok(g.generate()?),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSource::Csv { path, .. } => fix(path),
            DatasetSource::IdxPair { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DatasetSource::GaussianMixture(_) => {}
        }
    }
}

/// Hidden layers; input and output widths come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub method: AttackMethod,
    pub mode: AttackMode,
    pub canary: CanaryConfig,
    #[serde(default)]
    pub offline_score: OfflineScore,
    #[serde(default = "default_clamp")]
    pub confidence_clamp: f64,
    #[serde(default = "default_floor")]
    pub sigma_floor: f64,
}

fn default_clamp() -> f64 {
    CONFIDENCE_CLAMP
}

fn default_floor() -> f64 {
    SIGMA_FLOOR
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// Targets per seed, split as evenly as possible between members and
    /// non-members of the target model.
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    /// Models in the farm, the target model included.
    pub n_models: usize,
    pub master_seed: u64,
    /// One attack run per seed; each picks its own target model and targets.
    pub seeds: Vec<u64>,
    pub attack: AttackSection,
    pub targets: TargetSpec,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Reads a config or manifest. Relative paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let json = |source| CliError::Json {
            path: path.to_path_buf(),
            source,
        };
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(json)?;
        if let Some(embedded) = value.get_mut("config") {
            value = embedded.take();
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(json)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n_models < 2 {
            return bad(format!("n_models must be at least 2, got {}", self.n_models));
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct".into());
        }
        if self.targets.count < 2 {
            return bad("targets.count must be at least 2".into());
        }
        self.train.validate()?;
        self.attack.canary.validate()?;
        Ok(())
    }

    pub fn arch_for(&self, dataset: &Dataset) -> Result<ArchDescriptor> {
        Ok(ArchDescriptor::new(
            dataset.dim(),
            self.arch.hidden_dims.clone(),
            dataset.num_classes(),
            self.arch.activation,
        )?)
    }
}
