//! Experiment config loading with `key=value` overrides.

use std::fmt;
use std::path::Path;

use nlscore::simulation::ConfigError;
use nlscore::ExperimentConfig;
use serde_json::Value;

#[derive(Debug)]
pub enum LoadError {
    Io(std::io::Error),
    /// Malformed JSON, with 1-based position.
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    /// Unknown key, wrong type or a bad override.
    Shape(String),
    Invalid(ConfigError),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io(e) => write!(f, "cannot read config: {e}"),
            LoadError::Parse { line, column, message } => {
                write!(f, "config parse error at line {line}, column {column}: {message}")
            }
            LoadError::Shape(m) => write!(f, "config error: {m}"),
            LoadError::Invalid(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LoadError {}

/// Reads a JSON config file, applies overrides and validates the result.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(LoadError::Io)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| LoadError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    finish(value, overrides)
}

/// Applies overrides on top of an existing config and validates.
pub fn override_config(base: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig, LoadError> {
    let value = serde_json::to_value(base).expect("config serializes");
    finish(value, overrides)
}

fn finish(mut value: Value, overrides: &[String]) -> Result<ExperimentConfig, LoadError> {
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let config: ExperimentConfig = serde_json::from_value(value).map_err(|e| LoadError::Shape(e.to_string()))?;
    config.validate().map_err(LoadError::Invalid)?;
    Ok(config)
}

/// Sets `a.b.c=value` on a JSON object. Values are parsed as JSON when
/// possible and kept as strings otherwise; comma-separated values, or any
/// value assigned to a key that currently holds an array, become arrays.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), LoadError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| LoadError::Shape(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(LoadError::Shape(format!("override `{spec}` has an empty key")));
    }
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| LoadError::Shape(format!("override `{key}`: `{part}` is not inside an object")))?;
        if parts.peek().is_none() {
            let is_list = matches!(obj.get(part), Some(Value::Array(_)));
            obj.insert(part.to_string(), parse_value(raw, is_list));
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

fn parse_value(raw: &str, is_list: bool) -> Value {
    let raw = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        if is_list && !v.is_array() {
            return Value::Array(vec![v]);
        }
        return v;
    }
    if is_list || raw.contains(',') {
        return Value::Array(raw.split(',').map(|s| scalar(s.trim())).collect());
    }
    scalar(raw)
}

fn scalar(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}
