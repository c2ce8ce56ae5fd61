//! Settings resolution: built-in defaults, then `--config` JSON, then flags.
//!
//! Merging happens on JSON values so that a config file may set any nested
//! field of the core configuration types without restating the rest.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub fn read_config(path: Option<&Path>) -> CliResult<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::Usage(format!(
            "--config {}: expected a JSON object",
            path.display()
        )));
    }
    Ok(value)
}

/// Rejects keys the defaults do not have, so typos fail loudly.
fn check_keys(defaults: &Value, overlay: &Value, prefix: &str) -> CliResult<()> {
    let (Value::Object(d), Value::Object(o)) = (defaults, overlay) else {
        return Ok(());
    };
    for (k, v) in o {
        let name = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match d.get(k) {
            None => return Err(CliError::Usage(format!("unknown config key `{name}`"))),
            Some(dv) => check_keys(dv, v, &name)?,
        }
    }
    Ok(())
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k.as_str()) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// `defaults` <- `config` <- `flags`, then deserialized.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    config: &Value,
    flags: Value,
) -> CliResult<T> {
    let mut value = serde_json::to_value(defaults).expect("settings serialize");
    check_keys(&value, config, "")?;
    merge(&mut value, config.clone());
    merge(&mut value, flags);
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid settings: {e}")))
}

/// Builds a JSON object from the flags that were actually given.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set(&mut self, path: &str, value: Option<impl Serialize>) -> &mut Self {
        let Some(v) = value else {
            return self;
        };
        let v = serde_json::to_value(v).expect("flag value serializes");
        let mut parts: Vec<&str> = path.split('.').collect();
        let last = parts.pop().expect("non-empty path");
        let mut node = &mut self.0;
        for p in parts {
            node = node
                .entry(p)
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("override paths do not collide");
        }
        node.insert(last.to_string(), v);
        self
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}
