//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key must be known to the
//! target type; later lines override earlier ones.

use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

pub trait FlatConfig: Default {
    const KEYS: &'static [&'static str];

    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    /// Every key with its current value, in `KEYS` order.
    fn entries(&self) -> Vec<(&'static str, String)>;

    fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_lines(text, path)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    /// Applies `key=value` overrides, e.g. from the command line.
    fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (k, v) = item.split_once('=').ok_or_else(|| Error::BadValue {
                key: item.clone(),
                value: String::new(),
                reason: "expected key=value".into(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

pub fn parse_lines(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected key=value, got `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

pub(crate) fn unknown_key(key: &str, valid: &'static [&'static str]) -> Error {
    Error::UnknownKey {
        key: key.to_string(),
        valid: valid.to_vec(),
    }
}
