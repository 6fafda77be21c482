//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment. Values are bare strings,
//! numbers, or bracketed comma-separated lists (`kappa = [1, 2.5, 40]`).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries
                .insert(key.to_owned(), value.trim().to_owned())
                .is_some()
            {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Set or override an entry (command-line flags win over files).
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Reject any key outside `allowed`.
    pub fn ensure_only(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.raw(key)
            .map(|v| {
                v.trim_matches('"')
                    .parse::<V>()
                    .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
            })
            .transpose()
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
        if inner.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        inner
            .split(',')
            .map(|item| {
                let item = item.trim().trim_matches('"');
                item.parse::<V>()
                    .map_err(|_| Error::Config(format!("bad list item `{item}` for `{key}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_lists_and_comments() {
        let cfg = KvConfig::parse(
            "# run\noptimizer = adaptive_moment\nstep_size = 0.01 # inline\nkappa = [1, 2.5, 40]\n",
        )
        .unwrap();
        assert_eq!(cfg.raw("optimizer"), Some("adaptive_moment"));
        assert_eq!(cfg.get::<f64>("step_size").unwrap(), Some(0.01));
        assert_eq!(
            cfg.get_list::<f64>("kappa").unwrap(),
            Some(vec![1.0, 2.5, 40.0])
        );
        assert_eq!(cfg.get_or::<u64>("seed", 7).unwrap(), 7);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        let cfg = KvConfig::parse("seed = 1\nbogus = 2").unwrap();
        assert!(cfg.ensure_only(&["seed"]).is_err());
        assert!(KvConfig::parse("a = 1\na = 2").is_err());
        assert!(KvConfig::parse("just words").is_err());
        assert!(cfg.get::<u64>("bogus").is_ok());
        let bad = KvConfig::parse("seed = x").unwrap();
        assert!(bad.get::<u64>("seed").is_err());
    }
}
