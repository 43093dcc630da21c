//! Flat `key = value` config files. Keys are the long flag names with
//! underscores; a flag given on the command line wins over the file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Keys that only make sense on the command line.
const FLAG_ONLY: [&str; 2] = ["config", "force"];

pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key {key}", i + 1)));
        }
    }
    Ok(out)
}

pub fn read_flat(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_flat(&text)
}

/// Renders resolved options back to the flat format, skipping unset ones.
pub fn to_flat<A: Serialize>(args: &A) -> Result<String> {
    let Value::Object(map) = serde_json::to_value(args)? else {
        return Err(CliError::Config("options must be a struct".into()));
    };
    let mut out = String::new();
    for (k, v) in map {
        if FLAG_ONLY.contains(&k.as_str()) {
            continue;
        }
        let text = match v {
            Value::Null => continue,
            Value::String(s) => s,
            other => other.to_string(),
        };
        out.push_str(&format!("{k} = {text}\n"));
    }
    Ok(out)
}

fn parse_value(raw: &str) -> Value {
    if let Ok(b) = raw.parse::<bool>() {
        return Value::Bool(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Value::from(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        if f.is_finite() {
            return Value::from(f);
        }
    }
    Value::String(raw.to_string())
}

/// Fills every option the command line left unset (or a switch left off)
/// from `file`. Unknown keys are an error.
pub fn merge<A: Serialize + DeserializeOwned>(args: A, file: &BTreeMap<String, String>) -> Result<A> {
    let Value::Object(mut map) = serde_json::to_value(&args)? else {
        return Err(CliError::Config("options must be a struct".into()));
    };
    for (key, raw) in file {
        if FLAG_ONLY.contains(&key.as_str()) {
            return Err(CliError::Config(format!("{key} cannot be set from a config file")));
        }
        let slot = map.get_mut(key).ok_or_else(|| CliError::Config(format!("unknown config key {key}")))?;
        if slot.is_null() || *slot == Value::Bool(false) {
            *slot = parse_value(raw);
        }
    }
    from_map(map)
}

fn from_map<A: DeserializeOwned>(map: Map<String, Value>) -> Result<A> {
    let keys: Vec<String> = map.keys().cloned().collect();
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(format!("bad value among {}: {e}", keys.join(", "))))
}
