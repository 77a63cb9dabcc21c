//! Optional TOML run configuration. Every value can also be given as a
//! command-line flag; flags win.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use choice_core::adapter::{Stage2Config, DEFAULT_HIDDEN};
use choice_core::optim::OptimConfig;
use choice_core::synthetic::GeneratorConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub data: DataSection,
    pub model: ModelSection,
    pub stage1: OptimSection,
    pub stage2: OptimSection,
    pub audit: AuditSection,
    pub synth: Option<GeneratorConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dataset: Option<PathBuf>,
    pub layout: Option<String>,
    pub tag: Option<String>,
    pub split_seed: Option<u64>,
    pub subsample_n: Option<usize>,
    pub ratios: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Built-in specification name or path to a specification TOML file.
    pub spec: Option<String>,
    pub hidden: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub max_iters: Option<usize>,
    pub step_size: Option<f64>,
    pub tolerance: Option<f64>,
    pub early_stop_patience: Option<usize>,
    pub max_step_decays: Option<u32>,
    pub init_jitter: Option<f64>,
}

impl OptimSection {
    pub fn apply(&self, mut base: OptimConfig, seed: u64) -> OptimConfig {
        base.seed = seed;
        if let Some(v) = self.max_iters {
            base.max_iters = v;
        }
        if let Some(v) = self.step_size {
            base.step_size = v;
        }
        if let Some(v) = self.tolerance {
            base.tolerance = v;
        }
        if let Some(v) = self.early_stop_patience {
            base.early_stop_patience = v;
        }
        if let Some(v) = self.max_step_decays {
            base.max_step_decays = v;
        }
        if let Some(v) = self.init_jitter {
            base.init_jitter = v;
        }
        base
    }
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub delta_fraction: Option<f64>,
    pub fd_fraction: Option<f64>,
    pub vot_ceiling: Option<f64>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn stage1(&self, seed: u64) -> OptimConfig {
        self.stage1.apply(OptimConfig::stage1(), seed)
    }

    pub fn stage2(&self, seed: u64, hidden: Option<usize>) -> Stage2Config {
        Stage2Config {
            optim: self.stage2.apply(OptimConfig::stage2(), seed),
            hidden: hidden.or(self.model.hidden).unwrap_or(DEFAULT_HIDDEN),
        }
    }
}
