//! JSON run configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use symdepth_core::attention::AttentionConfig;
use symdepth_core::augment::MixConfig;
use symdepth_core::losses::LossConfig;
use symdepth_core::model::ModelConfig;
use symdepth_core::optim::AdamWConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub neck_channels: usize,
    pub class_count: usize,
    pub max_depth: f64,
    pub heads: usize,
    pub head_dim: usize,
    pub window: [usize; 2],
    pub grid: [usize; 2],
    pub rounds: usize,
    pub input: [usize; 2],
}

impl From<ModelConfig> for ModelSettings {
    fn from(c: ModelConfig) -> Self {
        let a = c.attention;
        Self {
            stage_channels: c.stage_channels,
            stage_depths: c.stage_depths,
            neck_channels: c.neck_channels,
            class_count: c.class_count,
            max_depth: c.max_depth,
            heads: a.heads,
            head_dim: a.head_dim,
            window: [a.window.0, a.window.1],
            grid: [a.grid.0, a.grid.1],
            rounds: a.ns,
            input: [c.height, c.width],
        }
    }
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelConfig::toy().into()
    }
}

impl ModelSettings {
    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            stage_channels: self.stage_channels,
            stage_depths: self.stage_depths,
            neck_channels: self.neck_channels,
            class_count: self.class_count,
            max_depth: self.max_depth,
            attention: AttentionConfig {
                heads: self.heads,
                head_dim: self.head_dim,
                window: (self.window[0], self.window[1]),
                grid: (self.grid[0], self.grid[1]),
                ns: self.rounds,
            },
            height: self.input[0],
            width: self.input[1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        let d = LossConfig::default();
        Self { lambda: d.lambda, alpha: d.alpha }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    pub p_apply: f64,
    /// Overrides the manifest's threshold bounds when set.
    pub depth_min: Option<f64>,
    pub depth_max: Option<f64>,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self { p_apply: MixConfig::indoor().p_apply, depth_min: None, depth_max: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

impl OptimizerSettings {
    pub fn to_config(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSettings,
    pub loss: LossSettings,
    pub augmentation: AugmentSettings,
    pub optimizer: OptimizerSettings,
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelSettings::default(),
            loss: LossSettings::default(),
            augmentation: AugmentSettings::default(),
            optimizer: OptimizerSettings::default(),
            steps: 200,
            batch_size: 4,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { lambda: self.loss.lambda, alpha: self.loss.alpha }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.to_config().validate()?;
        self.loss_config().validate()?;
        self.optimizer.to_config().validate()?;
        let a = &self.augmentation;
        if !(0.0..=1.0).contains(&a.p_apply) {
            return Err(CliError::Config(format!("augmentation.p_apply must lie in [0, 1], got {}", a.p_apply)));
        }
        if let (Some(lo), Some(hi)) = (a.depth_min, a.depth_max) {
            if !(lo > 0.0 && lo < hi) {
                return Err(CliError::Config(format!("augmentation bounds must satisfy 0 < min < max, got {lo}, {hi}")));
            }
        }
        if self.batch_size == 0 {
            return Err(CliError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}
