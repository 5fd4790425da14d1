use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::SceneConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::splat::{DeformConfig, OptimizeConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Depth,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub mode: InitMode,
    pub voxel: f64,
    pub random_count: usize,
    pub random_radius: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            mode: InitMode::Depth,
            voxel: 0.03,
            random_count: 2000,
            random_radius: 0.8,
        }
    }
}

/// Flow prior trained on other synthetic scenes for distillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub scenes: usize,
    pub samples_per_scene: usize,
    pub steps: usize,
    pub lr: f64,
    pub downsample: usize,
    pub model: ModelConfig,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            scenes: 6,
            samples_per_scene: 24,
            steps: 1500,
            lr: 1e-3,
            downsample: 4,
            model: ModelConfig {
                dim: 32,
                blocks: 2,
                heads: 2,
                patch: 4,
                channels: 3,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub scene: SceneConfig,
    pub init: InitConfig,
    pub deform: DeformConfig,
    pub optimize: OptimizeConfig,
    pub prior: PriorConfig,
    /// Distil from a trained prior in the main run.
    pub use_fmd: bool,
    /// Also run the opposite setting and report both.
    pub ablate_fmd: bool,
    /// Loop parameters of the held-out evaluation cameras.
    pub heldout: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scene: SceneConfig::default(),
            init: InitConfig::default(),
            deform: DeformConfig::default(),
            optimize: OptimizeConfig::default(),
            prior: PriorConfig::default(),
            use_fmd: true,
            ablate_fmd: false,
            heldout: vec![0.5, 1.5, 3.5, 4.5],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::input(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.scene.validate()?;
        self.optimize.validate()?;
        self.prior.model.validate()?;
        if self.prior.downsample != self.optimize.fmd_downsample {
            return Err(Error::input("prior and distillation downsample factors differ"));
        }
        if self.prior.downsample == 0
            || self.scene.width % self.prior.downsample != 0
            || self.scene.height % self.prior.downsample != 0
        {
            return Err(Error::input("downsample factor must divide the scene resolution"));
        }
        let small = (self.scene.width / self.prior.downsample, self.scene.height / self.prior.downsample);
        if small.0 % self.prior.model.patch != 0 || small.1 % self.prior.model.patch != 0 {
            return Err(Error::input("prior patch size must divide the distillation resolution"));
        }
        if !(self.init.voxel > 0.0) {
            return Err(Error::input("voxel size must be positive"));
        }
        if self.heldout.is_empty() || self.heldout.iter().any(|p| !(0.0..=6.0).contains(p)) {
            return Err(Error::input("held-out loop parameters must lie in [0, 6]"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
