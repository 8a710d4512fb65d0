//! Run configuration: TOML file, preset defaults and `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::SynthGrammar;
use crate::error::{OridError, Result};
use crate::instruct::BuilderConfig;

/// Setting this variable to anything but `0` or an empty string turns on deterministic mode.
pub const DETERMINISTIC_ENV: &str = "ORID_DETERMINISTIC";

pub fn deterministic_mode() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| !v.is_empty() && v != "0")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub samples: usize,
    pub seed: u64,
    pub grammar: SynthGrammar,
}

impl Default for SyntheticData {
    fn default() -> Self {
        SyntheticData { samples: 200, seed: 0, grammar: SynthGrammar::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL manifest; when absent the synthetic generator is used.
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticData,
    /// DS-graph file; the bundled graph when absent.
    pub ds_graph: Option<PathBuf>,
    /// Words rarer than this map to `<unk>`.
    pub vocab_min_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_image_extractor: f64,
    pub lr_other: f64,
    /// Weight of the consistency loss.
    pub beta: f64,
    pub clip_norm: f64,
    pub augment: bool,
    pub crop_padding: usize,
    pub flip_prob: f64,
    /// Stop once the training CE falls below this and every training report is reproduced.
    pub memorize_ce: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            lr_image_extractor: 1e-4,
            lr_other: 5e-4,
            beta: 0.1,
            clip_norm: 5.0,
            augment: true,
            crop_padding: 8,
            flip_prob: 0.5,
            memorize_ce: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub beam_width: usize,
    pub split: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { beam_width: 3, split: "test".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model preset the `model` table is layered over: toy, desk or full.
    pub preset: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub instruct: BuilderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_preset("desk").expect("desk preset exists")
    }
}

impl RunConfig {
    pub fn for_preset(preset: &str) -> Result<Self> {
        let model = ModelConfig::preset(preset)?;
        let epochs = if preset == "full" { 30 } else { 100 };
        Ok(RunConfig {
            preset: preset.to_string(),
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data: DataConfig {
                synthetic: SyntheticData {
                    grammar: SynthGrammar { image_size: model.vision.image_size, channels: model.vision.image_channels, ..Default::default() },
                    ..Default::default()
                },
                vocab_min_count: 3,
                ..Default::default()
            },
            model,
            train: TrainConfig { epochs, ..Default::default() },
            eval: EvalConfig::default(),
            instruct: BuilderConfig::default(),
        })
    }

    /// Layers an optional TOML file and then `key.path=value` overrides over the preset defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                text.parse::<toml::Table>().map_err(|e| OridError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let preset = match table.get("preset") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => return Err(OridError::Config(format!("preset must be a string, got {other}"))),
            None => "desk".to_string(),
        };
        let base = toml::Table::try_from(RunConfig::for_preset(&preset)?).map_err(|e| OridError::Config(e.to_string()))?;
        let merged = merge(base, table);
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| OridError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.instruct.validate()?;
        if self.train.batch_size == 0 {
            return Err(OridError::Config("train.batch_size must be positive".into()));
        }
        if self.eval.beam_width == 0 {
            return Err(OridError::Config("eval.beam_width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train.flip_prob) {
            return Err(OridError::Config("train.flip_prob must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| OridError::Config(e.to_string()))
    }

    /// Augmentation runs only when enabled and deterministic mode is off.
    pub fn augmentation_active(&self) -> bool {
        self.train.augment && !deterministic_mode()
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

/// Parses `a.b.c=value`; the value is read as TOML and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| OridError::Config(format!("override '{spec}' is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(OridError::Config(format!("bad override key '{key}'")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| OridError::Config(format!("override '{key}': '{p}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
