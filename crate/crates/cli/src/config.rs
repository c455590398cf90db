//! TOML run configuration: one table per command, keyed like the flags.
//!
//! ```toml
//! [train-bi]
//! kb = "data/kb.jsonl"
//! epochs = 10
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

/// Option keys that name files; left out of manifests.
const PATH_KEYS: &[&str] = &[
    "in", "out", "out-dir", "kb", "queries", "index", "encoder", "scorer", "candidates", "negatives",
    "pools", "replay", "lexicon", "log", "preds", "gold", "runs",
];

pub fn load(path: Option<&Path>) -> Result<toml::Table, CliError> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("missing input: {} ({e})", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

/// Overlays the flags that were given onto the command's config section.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, config: &toml::Table, command: &str) -> Result<T, CliError> {
    let mut base = match config.get(command) {
        Some(toml::Value::Table(t)) => serde_json::to_value(t).map_err(CliError::internal)?,
        Some(_) => return Err(CliError::usage(format!("config section [{command}] must be a table"))),
        None => serde_json::Value::Object(Default::default()),
    };
    let given = serde_json::to_value(flags).map_err(CliError::internal)?;
    if let (Some(dst), Some(src)) = (base.as_object_mut(), given.as_object()) {
        for (k, v) in src {
            let empty = v.is_null() || v.as_array().is_some_and(Vec::is_empty);
            if !empty {
                dst.insert(k.clone(), v.clone());
            }
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::usage(format!("config section [{command}]: {e}")))
}

/// The effective settings with file options removed.
pub fn settings<T: Serialize>(args: &T) -> serde_json::Value {
    let mut v = serde_json::to_value(args).unwrap_or_default();
    if let Some(map) = v.as_object_mut() {
        map.retain(|k, val| !PATH_KEYS.contains(&k.as_str()) && !val.is_null());
    }
    v
}

pub fn need<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}
