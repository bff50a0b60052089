use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_lambda, Mode, ModelConfig, Objective, MAX_SOURCE_LEN, MAX_TARGET_LEN};

pub const LR_GRID: [f64; 4] = [1e-5, 2e-5, 5e-5, 1e-4];
const LAMBDA_BUDGET: f64 = 0.3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModelSize {
    /// Single-layer stacks of width `d_model` (default 32).
    Toy,
    #[default]
    Base,
    Large,
}

impl BaseModelSize {
    pub fn name(self) -> &'static str {
        match self {
            BaseModelSize::Toy => "toy",
            BaseModelSize::Base => "base",
            BaseModelSize::Large => "large",
        }
    }
}

fn default_lr() -> f64 {
    5e-5
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_patience() -> usize {
    3
}
fn default_lambda() -> f64 {
    0.15
}
fn default_max_source_len() -> usize {
    MAX_SOURCE_LEN
}
fn default_max_target_len() -> usize {
    MAX_TARGET_LEN
}
fn default_seeds() -> Vec<u64> {
    vec![42]
}
fn default_warmup() -> f64 {
    0.05
}
fn default_clip() -> f64 {
    1.0
}
fn default_min_freq() -> usize {
    1
}
fn default_grid() -> Vec<f64> {
    LR_GRID.to_vec()
}

/// Training hyperparameters, read from a flat JSON object with these exact keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub base_model_size: BaseModelSize,
    /// Width override; only honoured for `toy`.
    #[serde(default)]
    pub d_model: Option<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Defaults to 64 for base, 32 for large, 16 for toy.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Defaults to 15 for base and toy, 10 for large.
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_lambda")]
    pub lambda1: f64,
    #[serde(default = "default_lambda")]
    pub lambda2: f64,
    /// Allows λ1 + λ2 to differ from 0.3.
    #[serde(default)]
    pub lambda_override: bool,
    #[serde(default = "default_max_source_len")]
    pub max_source_len: usize,
    #[serde(default = "default_max_target_len")]
    pub max_target_len: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default = "default_min_freq")]
    pub vocab_min_freq: usize,
    #[serde(default)]
    pub vocab_max_size: Option<usize>,
    #[serde(default)]
    pub fusion_use_logits: bool,
    #[serde(default)]
    pub literal_positive_only: bool,
    #[serde(default)]
    pub classifier_fresh_init: Option<bool>,
    /// Pretrained weights id, looked up under `$ECQG_CACHE_DIR/<id>/weights.safetensors`.
    #[serde(default)]
    pub init_from: Option<String>,
    #[serde(default = "default_grid")]
    pub lr_grid: Vec<f64>,
    /// Validation samples decoded greedily after each epoch for a metric snapshot; 0 disables it.
    #[serde(default)]
    pub snapshot_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl TrainConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn toy(d_model: usize) -> Self {
        Self { base_model_size: BaseModelSize::Toy, d_model: Some(d_model), ..Self::default() }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.base_model_size {
            BaseModelSize::Toy => 16,
            BaseModelSize::Base => 64,
            BaseModelSize::Large => 32,
        })
    }

    pub fn max_epochs(&self) -> usize {
        self.max_epochs.unwrap_or(match self.base_model_size {
            BaseModelSize::Large => 10,
            _ => 15,
        })
    }

    pub fn objective(&self) -> Result<Objective> {
        Objective::new(self.mode, self.lambda1, self.lambda2)
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut cfg = match self.base_model_size {
            BaseModelSize::Toy => ModelConfig::toy(vocab_size, self.d_model.unwrap_or(32)),
            BaseModelSize::Base => ModelConfig::base(vocab_size),
            BaseModelSize::Large => ModelConfig::large(vocab_size),
        };
        cfg.max_source_len = self.max_source_len;
        cfg.max_target_len = self.max_target_len;
        cfg.fusion_use_logits = self.fusion_use_logits;
        cfg.literal_positive_only = self.literal_positive_only;
        if let Some(p) = self.dropout {
            cfg.dropout = p;
        }
        if let Some(f) = self.classifier_fresh_init {
            cfg.classifier_fresh_init = f;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        check_lambda(self.lambda1, self.lambda2)?;
        if !self.lambda_override && (self.lambda1 + self.lambda2 - LAMBDA_BUDGET).abs() > 1e-9 {
            return fail(format!(
                "lambda1 + lambda2 = {} but must be {LAMBDA_BUDGET} unless lambda_override is set",
                self.lambda1 + self.lambda2
            ));
        }
        if self.early_stop_patience == 0 {
            return fail("early_stop_patience must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.warmup_fraction) || self.clip_norm <= 0.0 {
            return fail("weight_decay, warmup_fraction or clip_norm out of range".into());
        }
        if self.batch_size() == 0 || self.max_epochs() == 0 || self.max_steps == Some(0) {
            return fail("batch_size, max_epochs and max_steps must be positive".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.lr_grid.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return fail("lr_grid entries must be positive".into());
        }
        if self.d_model.is_some() && self.base_model_size != BaseModelSize::Toy {
            return fail("d_model can only be overridden for the toy size".into());
        }
        self.model_config(SPECIAL_ROOM)?;
        Ok(())
    }
}

// smallest vocabulary that passes model validation
const SPECIAL_ROOM: usize = crate::tokenizer::SPECIALS.len() + 1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_size() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size(), c.max_epochs(), c.early_stop_patience), (64, 15, 3));
        assert_eq!((c.lambda1, c.lambda2, c.weight_decay), (0.15, 0.15, 0.01));
        let l: TrainConfig = serde_json::from_str(r#"{"base_model_size":"large"}"#).unwrap();
        assert_eq!((l.batch_size(), l.max_epochs()), (32, 10));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_budget() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr":1e-4}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"lambda1":0.2,"lambda2":0.2}"#).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = TrainConfig { lambda_override: true, ..c };
        c.validate().unwrap();
        let c = TrainConfig { early_stop_patience: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
