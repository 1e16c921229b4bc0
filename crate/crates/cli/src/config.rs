//! Config-file overlay: defaults, then the file's `[command]` table, then
//! command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Top-level table of a TOML config file, as JSON.
pub fn load_file(path: Option<&Path>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    serde_json::to_value(table).map_err(|e| CliError::Usage(e.to_string()))
}

/// Recursively overwrites `base` with the entries of `patch`; nulls in
/// `patch` leave `base` alone.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (b, p) => *b = p.clone(),
    }
}

/// Nested patch from dotted keys; `None` values are skipped.
pub fn patch(entries: &[(&str, Option<Value>)]) -> Value {
    let mut root = Value::Object(Map::new());
    for (key, value) in entries {
        let Some(value) = value else { continue };
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .as_object_mut()
                .expect("patch nodes are objects")
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
        }
        node.as_object_mut()
            .expect("patch nodes are objects")
            .insert(parts[parts.len() - 1].to_string(), value.clone());
    }
    root
}

pub fn opt<T: Serialize>(v: &Option<T>) -> Option<Value> {
    v.as_ref().map(|x| serde_json::to_value(x).expect("flag values serialise"))
}

/// `T::default()` overlaid with `file[section]` and then `flags`.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(file: &Value, section: &str, flags: &Value) -> Result<T, CliError> {
    let mut v = serde_json::to_value(T::default()).expect("defaults serialise");
    if let Some(s) = file.get(section) {
        merge(&mut v, s);
    }
    merge(&mut v, flags);
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("[{section}] config: {e}")))
}

/// Global seed: the flag, else the file's top-level `seed`.
pub fn global_seed(file: &Value, flag: Option<u64>) -> Option<u64> {
    flag.or_else(|| file.get("seed").and_then(Value::as_u64))
}
