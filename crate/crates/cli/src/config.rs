//! Flat `key = value` configuration files layered over [`RunConfig`].
//!
//! Keys are dotted paths into the run configuration, e.g. `algo.horizon`,
//! `env.max_steps`, `vae.epochs` or `total_steps`. Values are JSON literals
//! (`512`, `true`, `[64, 64]`) or bare strings.

use std::fmt;
use std::str::FromStr;

use riverbench::bench_harness::RunConfig;
use riverbench::river_world::{ChannelConfig, Level};
use riverbench::safe_algos::Algorithm;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn typed_value(key: &str, raw: &str) -> Result<Value, ConfigError> {
    let bad = |e: String| ConfigError(format!("{key}: {e}"));
    let v = match key {
        "algorithm" => serde_json::to_value(Algorithm::from_str(raw).map_err(bad)?),
        "level" => serde_json::to_value(Level::from_str(raw).map_err(bad)?),
        "vae.channels" => {
            let c = ChannelConfig::parse(raw).ok_or_else(|| bad(format!("unknown channel config `{raw}`")))?;
            serde_json::to_value(c)
        }
        _ => return Ok(serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))),
    };
    v.map_err(|e| bad(e.to_string()))
}

/// Sets one dotted key; unknown keys and ill-typed values are errors.
pub fn apply(cfg: &mut RunConfig, key: &str, raw: &str) -> Result<(), ConfigError> {
    let mut root = serde_json::to_value(&*cfg).expect("run config serializes");
    let mut slot = &mut root;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| ConfigError(format!("unknown configuration key `{key}`")))?;
    }
    if slot.is_object() {
        return Err(ConfigError(format!("`{key}` is a section, not a value")));
    }
    *slot = typed_value(key, raw)?;
    *cfg = serde_json::from_value(root).map_err(|e| ConfigError(format!("invalid value for `{key}`: {e}")))?;
    Ok(())
}

pub fn apply_text(cfg: &mut RunConfig, text: &str) -> Result<(), ConfigError> {
    for (k, v) in parse_lines(text)? {
        apply(cfg, &k, &v)?;
    }
    Ok(())
}
