//! Flag/config-file merging.
//!
//! Every subcommand's arguments are a struct of optional fields that mirrors
//! a flat JSON object. A `--config` file supplies defaults; flags given on the
//! command line win. A run manifest is also accepted as a config file, in
//! which case its recorded `config` object is used.

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::UsageError;

fn load_object(path: &Path) -> anyhow::Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
    let value = match value {
        Value::Object(mut obj) if obj.contains_key("command") && obj.get("config").is_some_and(Value::is_object) => {
            obj.remove("config").expect("checked above")
        }
        other => other,
    };
    match value {
        Value::Object(obj) => Ok(obj),
        _ => Err(UsageError(format!("config {} must be a JSON object", path.display())).into()),
    }
}

/// Overlay the non-null fields of `flags` on the config file (if any).
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>) -> anyhow::Result<T> {
    let mut merged = match file {
        Some(path) => load_object(path)?,
        None => Map::new(),
    };
    let Value::Object(given) = serde_json::to_value(flags)? else {
        unreachable!("argument structs serialise to objects")
    };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| UsageError(format!("invalid configuration: {e}")).into())
}

/// The resolved arguments as a JSON object without unset fields.
pub fn resolved<T: Serialize>(args: &T) -> Value {
    match serde_json::to_value(args) {
        Ok(Value::Object(obj)) => Value::Object(obj.into_iter().filter(|(_, v)| !v.is_null()).collect()),
        Ok(other) => other,
        Err(_) => Value::Null,
    }
}
