//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the long
//! CLI flag names without the leading dashes. The file is turned into CLI
//! arguments placed before the real ones, so explicit flags win.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("{path}:{line}: flag `{key}` takes true or false, got {value:?}")]
    Bool {
        path: String,
        line: usize,
        key: String,
        value: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn parse_config(text: &str, origin: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
            path: origin.to_string(),
            line: i + 1,
        })?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
            });
        }
        entries.push((key.to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

/// Converts entries to `--key value` arguments. Keys listed in `switches`
/// are boolean flags: `true` emits `--key`, `false` emits nothing.
pub fn config_to_args(path: &Path, switches: &[&str]) -> Result<Vec<String>, ConfigError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: origin.clone(),
        source,
    })?;
    let mut args = Vec::new();
    for (line, (key, value)) in parse_config(&text, &origin)?.into_iter().enumerate() {
        if switches.contains(&key.as_str()) {
            match value.as_str() {
                "true" | "1" | "yes" | "on" => args.push(format!("--{key}")),
                "false" | "0" | "no" | "off" => {}
                _ => {
                    return Err(ConfigError::Bool {
                        path: origin,
                        line: line + 1,
                        key,
                        value,
                    })
                }
            }
        } else {
            args.push(format!("--{key}"));
            args.push(value);
        }
    }
    Ok(args)
}
