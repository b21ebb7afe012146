//! Scenario configuration files.
//!
//! A config is a flat TOML table holding exactly the [`ScenarioConfig`]
//! fields. A run manifest (JSON) is accepted anywhere a config is, since it
//! embeds the config it was produced from.

use std::fs;
use std::path::Path;

use dlf_core::scenario::ScenarioConfig;

use crate::error::{HarnessError, Result};

pub fn parse_toml(text: &str) -> std::result::Result<ScenarioConfig, toml::de::Error> {
    toml::from_str(text)
}

pub fn to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("scenario config is always representable as TOML")
}

#[derive(serde::Deserialize)]
struct ManifestConfig {
    config: ScenarioConfig,
}

/// Reads a TOML config, or the `config` object of a run manifest when the
/// file is JSON. The config is validated before it is returned.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let cfg = if text.trim_start().starts_with('{') {
        serde_json::from_str::<ManifestConfig>(&text)
            .map_err(|e| HarnessError::parse(path, e.to_string()))?
            .config
    } else {
        parse_toml(&text).map_err(|e| HarnessError::parse(path, e.to_string()))?
    };
    cfg.validate().map_err(|e| HarnessError::Run {
        context: path.display().to_string(),
        source: e,
    })?;
    Ok(cfg)
}

/// Parses a comma-separated list of numbers; each entry may be a decimal or
/// a fraction such as `1/5`.
pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let v = match p.split_once('/') {
                Some((a, b)) => {
                    let a: f64 = a.trim().parse().map_err(|_| format!("bad number `{p}`"))?;
                    let b: f64 = b.trim().parse().map_err(|_| format!("bad number `{p}`"))?;
                    a / b
                }
                None => p.parse().map_err(|_| format!("bad number `{p}`"))?,
            };
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("`{p}` is not finite"))
            }
        })
        .collect()
}
