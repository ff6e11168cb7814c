//! `key=value` text manifests (UTF-8, LF line endings).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key=value` lines. Blank lines and lines starting with `#` are
    /// skipped; keys are trimmed, values are kept verbatim.
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (n, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line {}: missing '='", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Format(format!("manifest line {}: empty key", n + 1)));
            }
            if m.entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Format(format!("manifest line {}: duplicate key {k}", n + 1)));
            }
        }
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl fmt::Display) -> &mut Self {
        let value = value.to_string();
        debug_assert!(!value.contains('\n'));
        self.entries.insert(key.into(), value);
        self
    }

    /// Stores a list as comma-separated values.
    pub fn set_list<V: fmt::Display>(&mut self, key: impl Into<String>, values: &[V]) -> &mut Self {
        let joined = values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        self.set(key, joined)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(s) => s
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}"))),
        }
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V> {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing key {key}")))
    }

    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(s) if s.trim().is_empty() => Ok(Some(Vec::new())),
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {p:?}"))))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    pub fn require_list<V: FromStr>(&self, key: &str) -> Result<Vec<V>> {
        self.get_list(key)?.ok_or_else(|| Error::Config(format!("missing key {key}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Copies every entry of `other`, overwriting existing keys.
    pub fn merge(&mut self, other: &Manifest) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Shortest round-tripping text for an `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
