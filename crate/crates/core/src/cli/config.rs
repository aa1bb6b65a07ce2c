use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::causal_gae::{DiscoverConfig, GaeConfig};
use crate::error::{Error, Result};
use crate::evaluation::EvaluationConfig;
use crate::scm_synth::{GenerateConfig, GroundTruthDag};
use crate::training::{ModelSnapshot, TrainConfig};
use crate::vae_core::VaeConfig;

/// Default locations, overridden by `--data` / `--out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a command can be configured with, read from TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces every per-section seed.
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    /// Generating graph; the built-in fundus graph (images) or linear
    /// benchmark (tabular) when absent.
    pub dag: Option<GroundTruthDag>,
    pub generate: GenerateConfig,
    pub vae: VaeConfig,
    pub gae: GaeConfig,
    pub train: TrainConfig,
    pub discover: DiscoverConfig,
    pub evaluate: EvaluationConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse { path: origin.display().to_string(), line, msg: e.message().to_string() }
        })
    }

    /// Propagates a global seed into every section.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.generate.seed = s;
            self.train.seed = s;
            self.discover.seed = s;
            self.evaluate.classifier.seed = s;
            self.evaluate.sample_seed = s;
        }
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot { vae: self.vae.clone(), gae: self.gae, train: self.train.clone() }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
