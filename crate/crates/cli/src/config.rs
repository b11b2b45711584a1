//! `--config` support: a JSON object whose keys are long flag names.
//! Values are appended to the command line unless the flag is already
//! present there, so explicit flags always win.

use std::fs;

use serde_json::Value;

use crate::error::CliError;

/// Flags with a `--no-<name>` counterpart.
const NEGATABLE: &[&str] = &["spsn"];

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn on_command_line(argv: &[String], key: &str) -> bool {
    let mut names = vec![format!("--{key}")];
    if NEGATABLE.contains(&key) {
        names.push(format!("--no-{key}"));
    }
    argv.iter().any(|a| {
        names
            .iter()
            .any(|n| a == n || a.starts_with(&format!("{n}=")))
    })
}

fn scalar(key: &str, v: &Value) -> Result<String, CliError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(CliError::Usage(format!(
            "config key {key:?}: expected a string or number"
        ))),
    }
}

/// Returns `argv` extended with the config file's values.
pub fn merge(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {path}: {e}")))?;
    let parsed: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {path}: {e}")))?;
    let Value::Object(map) = parsed else {
        return Err(CliError::Usage(format!(
            "config {path}: expected a JSON object"
        )));
    };

    let mut out = argv;
    let mut extra = Vec::new();
    for (raw_key, value) in map {
        let key = raw_key.replace('_', "-");
        if key == "config" || on_command_line(&out, &key) {
            continue;
        }
        match &value {
            Value::Bool(true) => extra.push(format!("--{key}")),
            Value::Bool(false) if NEGATABLE.contains(&key.as_str()) => {
                extra.push(format!("--no-{key}"))
            }
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for item in items {
                    extra.push(format!("--{key}"));
                    extra.push(scalar(&key, item)?);
                }
            }
            other => {
                extra.push(format!("--{key}"));
                extra.push(scalar(&key, other)?);
            }
        }
    }
    out.extend(extra);
    Ok(out)
}
