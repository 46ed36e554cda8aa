//! Flat `key=value` configuration text with dotted namespaces.
//!
//! Grammar (UTF-8, one entry per line):
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key '=' value          (surrounding whitespace is trimmed)
//! key     := segment ('.' segment)*  segment := [A-Za-z0-9_-]+
//! ```
//!
//! Keys are unique. Canonical serialization writes entries sorted by key, so two
//! equal configurations always serialize to identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.split('.').all(|seg| {
            !seg.is_empty()
                && seg
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !valid_key(k) {
                return Err(Error::Config(format!("line {}: invalid key {k:?}", n + 1)));
            }
            if map.entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
        }
        Ok(map)
    }

    /// Parses a single `key=value` override.
    pub fn parse_override(text: &str) -> Result<(String, String)> {
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {text:?} is not key=value")))?;
        let k = k.trim();
        if !valid_key(k) {
            return Err(Error::Config(format!("invalid key {k:?}")));
        }
        Ok((k.to_string(), v.trim().to_string()))
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Canonical text: sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Typed reader that remembers which keys were consumed.
    pub fn reader(&self) -> KvReader<'_> {
        KvReader {
            map: self,
            used: BTreeSet::new(),
        }
    }
}

pub struct KvReader<'a> {
    map: &'a KvMap,
    used: BTreeSet<String>,
}

impl KvReader<'_> {
    pub fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("{key}={raw}: {e}"))),
        }
    }

    pub fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    pub fn req<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    /// Fails on any key that was never read.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&str> = self
            .map
            .iter()
            .map(|(k, _)| k)
            .filter(|k| !self.used.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_canonical_text() {
        let m = KvMap::parse("# comment\n b.x = 2\n\na=1\n").unwrap();
        assert_eq!(m.to_text(), "a=1\nb.x=2\n");
        assert_eq!(KvMap::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(KvMap::parse("novalue").is_err());
        assert!(KvMap::parse("a=1\na=2").is_err());
        assert!(KvMap::parse("a..b=1").is_err());
    }

    #[test]
    fn reader_rejects_unknown_keys() {
        let m = KvMap::parse("a=1\nb=2").unwrap();
        let mut r = m.reader();
        assert_eq!(r.req::<u32>("a").unwrap(), 1);
        assert!(r.finish().is_err());
        let mut r = m.reader();
        assert!(r.req::<u32>("zz").is_err());
        assert!(r.opt::<bool>("b").is_err());
    }
}
