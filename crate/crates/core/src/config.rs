//! Run configuration: one TOML file with sections, every field optional.
//!
//! ```toml
//! seed = 7
//! profile = "desk"
//!
//! [labels]
//! variant = "or"
//! kind = "hard"
//! theta_audio = 0.5
//! theta_visual = 0.4
//!
//! [train]
//! steps = 1500
//! lr = 1e-3
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{FinetuneConfig, Split, SynthConfig, TrainConfig};
use crate::labels::{LabelPlan, Modality, TargetKind};
use crate::model::{ModelConfig, Profile};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_labels: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: Split,
    /// Fine-tune before retrieval instead of using the pre-trained weights.
    pub finetune_first: bool,
    /// Run the classification probe in full pipeline runs.
    pub classify: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { split: Split::Test, finetune_first: false, classify: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub vary: Modality,
    pub grid: Vec<f64>,
    pub fixed_other: f64,
    pub jobs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { vary: Modality::Visual, grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], fixed_other: 0.5, jobs: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Profile,
    pub labels: LabelPlan,
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            profile: Profile::Desk,
            labels: LabelPlan::default(),
            model: ModelOverrides::default(),
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            synth: SynthConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Model hyper-parameters for this run; `num_labels` falls back to
    /// `labels_hint` (the vocabulary size) and then to the profile default.
    pub fn model_config(&self, labels_hint: Option<usize>) -> Result<ModelConfig> {
        let mut m = ModelConfig::for_profile(self.profile);
        if let Some(r) = self.model.mask_ratio {
            m.mask_ratio = r;
        }
        if let Some(t) = self.model.temperature {
            m.temperature = t;
        }
        if let Some(n) = self.model.num_labels.or(labels_hint) {
            m.num_labels = n;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.labels.validate()?;
        self.train.validate()?;
        self.model_config(None)?;
        Ok(())
    }

    /// `variant`, or `variant/kind` for soft targets.
    pub fn method(&self) -> String {
        match self.labels.kind {
            TargetKind::Hard => self.labels.variant.to_string(),
            k => format!("{}/{k}", self.labels.variant),
        }
    }

    /// The configuration as JSON, for echoing into artifacts.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
