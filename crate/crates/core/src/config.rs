//! Flat key-value run configuration with per-dataset presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// Scores divided by `sqrt(d)`.
    Model,
    /// Scores divided by `sqrt(d / heads)`.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Every token of every mention.
    AllCells,
    /// The first token of each mention.
    FirstToken,
}

/// Architecture hyperparameters. Stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_positions: usize,
    pub conv_multiplier: usize,
    pub attention_scale: AttentionScale,
    pub post_conv_norm: bool,
    pub pooling: Pooling,
    /// Documents longer than this are truncated; 0 keeps everything.
    pub max_tokens: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d = {} must be a positive multiple of heads = {}",
                self.d, self.heads
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Config("blocks must be at least 1".into()));
        }
        if self.conv_multiplier == 0 {
            return Err(Error::Config("conv_multiplier must be at least 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// Everything a run needs, as one flat table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub d: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_positions: usize,
    pub conv_multiplier: usize,
    pub attention_scale: AttentionScale,
    pub post_conv_norm: bool,
    pub pooling: Pooling,
    pub max_tokens: usize,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_eps: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub clip_norm: f64,
    pub noise_eta: f64,
    pub noise_decay: f64,
    /// Add gradient noise after clipping (otherwise before).
    pub noise_after_clip: bool,
    pub word_keep: f64,
    pub interior_keep: f64,
    pub final_keep: f64,
    pub ner_weight: f64,
    pub positive_prob: f64,
    pub patience: usize,
    /// Steps between dev evaluations; 0 means one pass over the training
    /// pairs (pairs / batch_size).
    pub eval_every: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub threads: usize,

    pub bpe_budget: usize,
    pub min_count: usize,
    /// Pooled train+dev re-split size for corpora trained with a held-out
    /// early-stopping set; 0 keeps the given splits.
    pub resplit_train: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            d: 128,
            blocks: 2,
            heads: 4,
            max_positions: 512,
            conv_multiplier: 4,
            attention_scale: AttentionScale::Model,
            post_conv_norm: false,
            pooling: Pooling::AllCells,
            max_tokens: 0,
            learning_rate: 0.0005,
            batch_size: 32,
            adam_eps: 1e-4,
            adam_beta1: 0.1,
            adam_beta2: 0.9,
            clip_norm: 10.0,
            noise_eta: 0.1,
            noise_decay: 0.55,
            noise_after_clip: true,
            word_keep: 0.85,
            interior_keep: 0.95,
            final_keep: 0.35,
            ner_weight: 1.0,
            positive_prob: 0.5,
            patience: 5,
            eval_every: 0,
            max_steps: 100_000,
            seed: 20,
            threads: 1,
            bpe_budget: 2500,
            min_count: 1,
            resplit_train: 0,
        }
    }
}

pub const PRESETS: &[&str] = &[
    "cdr",
    "cdr+data",
    "cpr",
    "ctd",
    "standard-adam",
    "synthetic",
];

impl Config {
    pub fn preset(name: &str) -> Result<Config> {
        let base = Config::default();
        let c = match name {
            "cdr" => Config {
                resplit_train: 850,
                ..base
            },
            "cdr+data" => Config {
                word_keep: 0.95,
                interior_keep: 0.95,
                final_keep: 0.5,
                bpe_budget: 10_000,
                resplit_train: 850,
                ..base
            },
            "cpr" => Config {
                d: 200,
                adam_eps: 1e-8,
                noise_eta: 1.0,
                word_keep: 0.5,
                interior_keep: 1.0,
                final_keep: 0.85,
                bpe_budget: 7500,
                ..base
            },
            "ctd" => Config {
                word_keep: 0.95,
                interior_keep: 0.95,
                final_keep: 0.5,
                bpe_budget: 50_000,
                ..base
            },
            "standard-adam" => Config {
                adam_eps: 1e-8,
                adam_beta1: 0.9,
                adam_beta2: 0.999,
                resplit_train: 850,
                ..base
            },
            "synthetic" => Config {
                d: 24,
                blocks: 2,
                heads: 4,
                max_positions: 256,
                learning_rate: 0.003,
                batch_size: 32,
                adam_eps: 1e-8,
                adam_beta1: 0.9,
                adam_beta2: 0.999,
                noise_eta: 1e-4,
                word_keep: 1.0,
                interior_keep: 1.0,
                final_keep: 1.0,
                patience: 8,
                max_steps: 2000,
                bpe_budget: 800,
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(c)
    }

    /// Preset (or defaults), then the keys of an optional TOML file, then
    /// `key=value` overrides. Values are parsed as TOML, falling back to a
    /// bare string.
    pub fn resolve(
        preset: Option<&str>,
        file_text: Option<&str>,
        overrides: &[String],
    ) -> Result<Config> {
        let base = match preset {
            Some(p) => Config::preset(p)?,
            None => Config::default(),
        };
        Config::resolve_from(&base, file_text, overrides)
    }

    /// As [`Config::resolve`], starting from `base`.
    pub fn resolve_from(
        base: &Config,
        file_text: Option<&str>,
        overrides: &[String],
    ) -> Result<Config> {
        let mut table = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(text) = file_text {
            let file: toml::Table = text
                .parse()
                .map_err(|e| Error::Config(format!("config file: {e}")))?;
            for (k, v) in file {
                table.insert(k, v);
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = format!("v = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            table.insert(k.trim().to_string(), value);
        }
        let config: Config = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        for (name, p) in [
            ("word_keep", self.word_keep),
            ("interior_keep", self.interior_keep),
            ("final_keep", self.final_keep),
            ("positive_prob", self.positive_prob),
        ] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("{name} = {p} must be in (0, 1]")));
            }
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(Error::Config(
                "learning_rate and batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        if self.noise_eta < 0.0 || self.ner_weight < 0.0 {
            return Err(Error::Config(
                "noise_eta and ner_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            blocks: self.blocks,
            heads: self.heads,
            max_positions: self.max_positions,
            conv_multiplier: self.conv_multiplier,
            attention_scale: self.attention_scale,
            post_conv_norm: self.post_conv_norm,
            pooling: self.pooling,
            max_tokens: self.max_tokens,
        }
    }
}
