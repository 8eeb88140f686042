//! TOML experiment configuration. Unknown keys are rejected everywhere.
//!
//! ```toml
//! seed = 0
//! protocol = "fedavg"          # fedavg | fedshampoo | fl-group-dp | dp-clgecl
//! output_dir = "runs/fedavg"
//!
//! [dataset.synthetic]          # or: [dataset] path = "data.jsonl"
//! providers_per_client = [20, 20]
//!
//! [model]
//! hidden = [32]
//! frozen = ["layer0"]
//!
//! [federation]
//! rounds = 10
//! clients_per_round = 2
//! local = { epochs = 1, batch_size = 16 }
//!
//! [optimizer]
//! kind = "adamw"
//! lr = 0.01
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::fedsim::SyntheticConfig;
use crate::learners::{LoraConfig, OptimizerConfig};
use crate::metrics::Normalization;
use crate::protocols::{ClientSampling, DpConfig, DualConfig, LocalSchedule};
use crate::wire::{GbConvention, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Fedavg,
    Fedshampoo,
    FlGroupDp,
    DpClgecl,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraSpec {
    pub rank: usize,
    /// Layer names receiving adapters; their base weights are frozen.
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<f64>,
    #[serde(default = "default_lora_std")]
    pub init_std: f64,
}

fn default_lora_std() -> f64 {
    0.01
}

impl LoraSpec {
    pub fn lora_config(&self) -> LoraConfig {
        LoraConfig { rank: self.rank, scaling: self.scaling, init_std: self.init_std }
    }
}

/// Centralized training on providers disjoint from the federation before
/// the first round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    pub providers: usize,
    pub records_per_provider: usize,
    pub local: LocalSchedule,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Hidden widths between the feature dimension and the class count.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub frozen: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora: Option<LoraSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSpec {
    pub rounds: u32,
    pub clients_per_round: usize,
    #[serde(default)]
    pub sampling: ClientSampling,
    pub local: LocalSchedule,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    #[serde(default)]
    pub gb: GbConvention,
    #[serde(default)]
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub protocol: ProtocolKind,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    pub federation: FederationSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual: Option<DualConfig>,
    #[serde(default)]
    pub report: ReportSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Structural checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), None) => {}
            (None, Some(s)) => s.validate()?,
            _ => return Err(config_err("dataset: set exactly one of `path` and `synthetic`")),
        }
        let dp_needed = matches!(self.protocol, ProtocolKind::FlGroupDp | ProtocolKind::DpClgecl);
        if dp_needed != self.dp.is_some() {
            return Err(config_err(if dp_needed {
                "the [dp] section is required for fl-group-dp and dp-clgecl"
            } else {
                "the [dp] section only applies to fl-group-dp and dp-clgecl"
            }));
        }
        if self.dual.is_some() && self.protocol != ProtocolKind::DpClgecl {
            return Err(config_err("the [dual] section only applies to dp-clgecl"));
        }
        if self.model.hidden.contains(&0) {
            return Err(config_err("model.hidden widths must be positive"));
        }
        self.federation.local.validate()?;
        self.optimizer.validate()
    }

    /// `output_dir` resolved against `root` when relative.
    pub fn resolve_output(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) if self.output_dir.is_relative() => r.join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}
