//! Flat `key = value` config files with `[section]` headers.
//!
//! Two sections are understood: `[model]` (architecture hyperparameters)
//! and `[train]` (optimization settings). Unknown sections or keys are
//! rejected so typos fail loudly. CLI flags override file values.

use std::collections::BTreeMap;
use std::path::Path;

use assm_core::model::{ModelConfig, TaskHead};
use assm_core::train::{default_milestones, LossKind, TrainConfig};

use crate::error::{Result, ToolError};

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    /// section -> key -> value, in file terms
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }
}

/// Parses the `key = value` section format; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<RawConfig> {
    let mut out = RawConfig::default();
    let mut section = String::from("model");
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| {
                ToolError::Config(format!("line {}: unterminated section header", lineno + 1))
            })?;
            section = name.trim().to_string();
            if section.is_empty() {
                return Err(ToolError::Config(format!(
                    "line {}: empty section name",
                    lineno + 1
                )));
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ToolError::Config(format!("line {}: expected `key = value`, got {line:?}", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(ToolError::Config(format!("line {}: empty key", lineno + 1)));
        }
        out.sections
            .entry(section.clone())
            .or_default()
            .insert(key, value);
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn parse_val<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| {
        ToolError::Config(format!("[{section}] {key} = {v:?} is not a valid value"))
    })
}

/// Builds the model config from the `[model]` section over toy defaults.
pub fn model_config(raw: &RawConfig) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::v2_toy();
    if let Some(sec) = raw.sections.get("model") {
        for (key, v) in sec {
            match key.as_str() {
                "channels" => cfg.channels = parse_val("model", key, v)?,
                "state_dim" => cfg.state_dim = parse_val("model", key, v)?,
                "groups" => cfg.groups = parse_val("model", key, v)?,
                "blocks_per_group" => cfg.blocks_per_group = parse_val("model", key, v)?,
                "window" => cfg.window = parse_val("model", key, v)?,
                "heads" => cfg.heads = parse_val("model", key, v)?,
                "prompt_count" => cfg.prompt_count = parse_val("model", key, v)?,
                "prompt_rank" => cfg.prompt_rank = parse_val("model", key, v)?,
                "ffn_expansion" => cfg.ffn_expansion = parse_val("model", key, v)?,
                "scale" => cfg.scale = parse_val("model", key, v)?,
                "task" => {
                    cfg.task = match v.as_str() {
                        "sr" | "super_resolution" => TaskHead::SuperResolution,
                        "denoise" => TaskHead::Denoise,
                        other => {
                            return Err(ToolError::Config(format!(
                                "[model] task = {other:?}; expected sr or denoise"
                            )))
                        }
                    }
                }
                other => {
                    return Err(ToolError::Config(format!("[model] unknown key {other:?}")))
                }
            }
        }
    }
    for name in raw.sections.keys() {
        if name != "model" && name != "train" {
            return Err(ToolError::Config(format!("unknown section [{name}]")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Builds the training config from the `[train]` section over toy defaults.
pub fn train_config(raw: &RawConfig, seed: u64) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::toy(2000, seed);
    let mut explicit_milestones = false;
    if let Some(sec) = raw.sections.get("train") {
        for (key, v) in sec {
            match key.as_str() {
                "lr" => cfg.lr = parse_val("train", key, v)?,
                "beta1" => cfg.beta1 = parse_val("train", key, v)?,
                "beta2" => cfg.beta2 = parse_val("train", key, v)?,
                "batch" => cfg.batch = parse_val("train", key, v)?,
                "steps" => cfg.steps = parse_val("train", key, v)?,
                "patch" => cfg.patch = parse_val("train", key, v)?,
                "scale" => cfg.scale = parse_val("train", key, v)?,
                "seed" => cfg.seed = parse_val("train", key, v)?,
                "clip_grads" => cfg.clip_grads = parse_val("train", key, v)?,
                "loss" => {
                    cfg.loss = match v.as_str() {
                        "l1" => LossKind::L1,
                        "charbonnier" => LossKind::Charbonnier,
                        other => {
                            return Err(ToolError::Config(format!(
                                "[train] loss = {other:?}; expected l1 or charbonnier"
                            )))
                        }
                    }
                }
                "milestones" => {
                    explicit_milestones = true;
                    cfg.milestones = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse_val("train", key, s.trim()))
                        .collect::<Result<Vec<usize>>>()?;
                }
                other => {
                    return Err(ToolError::Config(format!("[train] unknown key {other:?}")))
                }
            }
        }
    }
    if !explicit_milestones {
        cfg.milestones = default_milestones(cfg.steps);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_overrides_defaults() {
        let raw = parse_config(
            "# architecture\n[model]\nchannels = 16\nheads = 2  # inline\n\n[train]\nsteps = 10\nlr = 1e-3\n",
        )
        .unwrap();
        let m = model_config(&raw).unwrap();
        assert_eq!(m.channels, 16);
        assert_eq!(m.heads, 2);
        assert_eq!(m.state_dim, ModelConfig::v2_toy().state_dim);
        let t = train_config(&raw, 5).unwrap();
        assert_eq!(t.steps, 10);
        assert_eq!(t.lr, 1e-3);
        assert_eq!(t.seed, 5);
        assert_eq!(t.milestones, default_milestones(10));
    }

    #[test]
    fn empty_text_gives_toy_defaults() {
        let raw = parse_config("").unwrap();
        let m = model_config(&raw).unwrap();
        assert_eq!(m.channels, ModelConfig::v2_toy().channels);
        let t = train_config(&raw, 1).unwrap();
        assert_eq!(t.lr, 2e-4);
    }

    #[test]
    fn rejects_unknown_keys_sections_and_bad_lines() {
        assert!(parse_config("key_without_value\n").is_err());
        assert!(parse_config("[unclosed\n").is_err());
        let raw = parse_config("[model]\nchanels = 4\n").unwrap();
        assert!(model_config(&raw).is_err());
        let raw = parse_config("[optimizer]\nlr = 1\n").unwrap();
        assert!(model_config(&raw).is_err());
        let raw = parse_config("[train]\nloss = l3\n").unwrap();
        assert!(train_config(&raw, 0).is_err());
    }

    #[test]
    fn milestones_and_task_parse() {
        let raw = parse_config("[model]\ntask = denoise\n[train]\nmilestones = 4, 8\nsteps = 12\n")
            .unwrap();
        assert!(matches!(model_config(&raw).unwrap().task, TaskHead::Denoise));
        assert_eq!(train_config(&raw, 0).unwrap().milestones, vec![4, 8]);
    }
}
