use serde_json::Value;

use crate::error::{Error, Result};

use super::{run, RunOutput, SimConfig};

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: Value,
    pub config: SimConfig,
    pub output: RunOutput,
}

/// Interprets a command-line token as a number or boolean, else a string.
pub fn parse_sweep_value(token: &str) -> Value {
    let t = token.trim();
    serde_json::from_str::<Value>(t)
        .ok()
        .filter(|v| v.is_number() || v.is_boolean())
        .unwrap_or_else(|| Value::String(t.to_string()))
}

/// Copy of `config` with the scalar at dotted `path` replaced by `value`.
pub fn set_param(config: &SimConfig, path: &str, value: &Value) -> Result<SimConfig> {
    let mut root = serde_json::to_value(config).expect("config serializes");
    let unknown = || Error::config(path, "unknown or non-scalar parameter path");
    let mut slot = &mut root;
    for segment in path.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|obj| obj.get_mut(segment))
            .ok_or_else(unknown)?;
    }
    if slot.is_object() || slot.is_array() {
        return Err(unknown());
    }
    *slot = value.clone();
    SimConfig::from_value(root)
}

/// One run per value, everything else (including the seed) fixed.
pub fn sweep(config: &SimConfig, path: &str, values: &[Value]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::config(path, "no sweep values given"));
    }
    let configs = values
        .iter()
        .map(|v| set_param(config, path, v))
        .collect::<Result<Vec<_>>>()?;
    configs
        .into_iter()
        .zip(values)
        .map(|(cfg, v)| {
            let output = run(&cfg)?;
            Ok(SweepPoint {
                value: v.clone(),
                config: cfg,
                output,
            })
        })
        .collect()
}
