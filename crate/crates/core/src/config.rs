//! Flat `key=value` option files. Keys are the long flag names without dashes;
//! blank lines and lines starting with `#` are skipped.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key=value", n + 1)))?;
            let key = k.trim().trim_start_matches("--").to_string();
            if key.is_empty() {
                return invalid(format!("config line {}: empty key", n + 1));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return invalid(format!("config line {}: duplicate key {key}", n + 1));
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        ConfigFile::parse(&text)
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => invalid(format!("unknown config key {k}")),
            None => Ok(()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::InvalidArgument(format!("config key {key}: cannot parse {v:?}")))
            })
            .transpose()
    }

    /// `cli`, else the file's value, else `default`.
    pub fn resolve<T: FromStr>(&self, cli: Option<T>, key: &str, default: T) -> Result<T> {
        match cli {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}
