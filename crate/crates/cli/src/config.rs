//! Flat `key = value` configuration with `#` comments.
//!
//! Values are layered: command-line flags override the config file, which
//! overrides built-in defaults. Keys a command does not know are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn strip_comment(line: &str) -> &str {
    let mut prev_ws = true;
    for (i, ch) in line.char_indices() {
        if ch == '#' && prev_ws {
            return &line[..i];
        }
        prev_ws = ch.is_whitespace();
    }
    line
}

/// Parses config text into ordered key/value pairs.
pub fn parse_kv(text: &str, source: &str) -> CliResult<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::config(format!("{source}:{}: expected `key = value`", n + 1))
        })?;
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        if key.is_empty() {
            return Err(CliError::config(format!("{source}:{}: empty key", n + 1)));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(CliError::config(format!(
                "{source}:{}: `{key}` is set twice",
                n + 1
            )));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    /// Merges the optional config file and the given flags, checking every key
    /// against `allowed`.
    pub fn resolve(
        allowed: &[&str],
        file: Option<&Path>,
        flags: Vec<(&'static str, Option<String>)>,
    ) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            for (k, v) in parse_kv(&text, &path.display().to_string())? {
                if !allowed.contains(&k.as_str()) {
                    return Err(CliError::config(format!(
                        "unknown key `{k}` in {} (allowed: {})",
                        path.display(),
                        allowed.join(", ")
                    )));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in flags {
            debug_assert!(allowed.contains(&k), "flag {k} missing from allowed keys");
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    /// Parses a value, naming the key in the error.
    pub fn parse<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| {
                    CliError::config(format!("invalid value for `{key}`: `{v}` ({e})"))
                })
            })
            .transpose()
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key)
            .ok_or_else(|| CliError::config(format!("`{key}` is required")))
    }

    /// Records a resolved value (used to write the effective configuration).
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
