use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use crate::error::{invalid, Result};
use crate::groups::Level;

/// One training prompt pair and the level it edits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPair {
    pub level: Level,
    pub src: String,
    pub tgt: String,
}

impl PromptPair {
    pub fn new(level: Level, src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            level,
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}

/// Training hyper-parameters. The three loss weights have no defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub lambda_dir: f64,
    pub lambda_id: f64,
    pub lambda_region: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Latents per step.
    #[serde(default = "one")]
    pub batch: usize,
    /// Views rendered for the identity loss, spread over the yaw range.
    #[serde(default = "default_views")]
    pub views: usize,
    #[serde(default = "default_yaw_range")]
    pub yaw_range: f64,
    /// Direction noise std; `None` uses the hypernetwork's own setting.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Samples per ray while training; 0 keeps the generator's default.
    #[serde(default)]
    pub render_steps: usize,
    /// Write a hypernetwork checkpoint every this many steps (0: only at the
    /// end).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Identity loss only for shape and attribute edits, region loss only
    /// for attribute edits.
    #[serde(default = "yes")]
    pub level_gating: bool,
    #[serde(default)]
    pub prompts: Vec<PromptPair>,
}

fn default_steps() -> usize {
    200
}
fn default_lr() -> f64 {
    1e-3
}
fn one() -> usize {
    1
}
fn default_views() -> usize {
    3
}
fn default_yaw_range() -> f64 {
    0.4
}
fn yes() -> bool {
    true
}

impl TrainingConfig {
    pub fn new(weights: LossWeights) -> Self {
        Self {
            lambda_dir: weights.lambda_dir,
            lambda_id: weights.lambda_id,
            lambda_region: weights.lambda_region,
            steps: default_steps(),
            lr: default_lr(),
            batch: 1,
            views: default_views(),
            yaw_range: default_yaw_range(),
            sigma: None,
            seed: 0,
            render_steps: 0,
            checkpoint_every: 0,
            level_gating: true,
            prompts: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| crate::Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_dir: self.lambda_dir,
            lambda_id: self.lambda_id,
            lambda_region: self.lambda_region,
        }
    }

    /// Loss weights in effect for an edit at `level`.
    pub fn weights_for(&self, level: Level) -> LossWeights {
        let mut w = self.weights();
        if self.level_gating {
            if level == Level::Style {
                w.lambda_id = 0.0;
            }
            if level != Level::Attribute {
                w.lambda_region = 0.0;
            }
        }
        w
    }

    /// Yaws for the identity views: evenly spaced over `±yaw_range`.
    pub fn view_yaws(&self) -> Vec<f64> {
        if self.views == 1 {
            return vec![0.0];
        }
        let n = self.views as f64 - 1.0;
        (0..self.views)
            .map(|i| -self.yaw_range + 2.0 * self.yaw_range * i as f64 / n)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_dir", self.lambda_dir),
            ("lambda_id", self.lambda_id),
            ("lambda_region", self.lambda_region),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(invalid("lr must be finite and non-negative"));
        }
        if self.batch == 0 || self.views == 0 {
            return Err(invalid("batch and views must be at least 1"));
        }
        if !(self.yaw_range.is_finite() && self.yaw_range >= 0.0) {
            return Err(invalid("yaw_range must be finite and non-negative"));
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(invalid("sigma must be finite and non-negative"));
            }
        }
        for p in &self.prompts {
            if p.src.trim().is_empty() || p.tgt.trim().is_empty() {
                return Err(invalid("training prompts must be non-empty"));
            }
        }
        Ok(())
    }
}
