//! Flat `key=value` text used by config and synthetic-spec files.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed `key=value` lines. Blank lines and `#` comments are ignored.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !allowed.contains(&k) {
                return Err(Error::InvalidConfig(format!("line {}: unknown key {k:?}", n + 1)));
            }
            if entries.insert(k.to_string(), (n + 1, v.to_string())).is_some() {
                return Err(Error::InvalidConfig(format!("line {}: duplicate key {k:?}", n + 1)));
            }
        }
        Ok(KeyValues { entries })
    }

    /// Parses `key` into `slot` if present.
    pub fn set<V: FromStr>(&self, key: &str, slot: &mut V) -> Result<()> {
        if let Some((line, raw)) = self.entries.get(key) {
            *slot = raw
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("line {line}: bad value {raw:?} for {key}")))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }
}
