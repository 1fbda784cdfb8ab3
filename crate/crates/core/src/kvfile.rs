//! Flat `key = value` configuration files with optional `[section]` blocks.
//!
//! The format used by train configs and synthesis specs: UTF-8 text, one
//! `key = value` pair per line, `#` comments, blank lines ignored. A line
//! `[name]` opens a named section; keys before any section are global.
//! Values are taken verbatim (trimmed), so strings need no quoting.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::Result;

/// Parsed key = value document: global keys plus ordered named sections.
#[derive(Debug, Clone, Default)]
pub struct KvFile {
    pub global: KvMap,
    pub sections: Vec<(String, KvMap)>,
}

/// One scope of key/value pairs with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<KvFile> {
        let mut doc = KvFile::default();
        let mut current: Option<(String, KvMap)> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Config {
                    line: line_no,
                    message: "unterminated section header".into(),
                })?;
                if let Some(done) = current.take() {
                    doc.sections.push(done);
                }
                current = Some((name.trim().to_string(), KvMap::default()));
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            let scope = match current.as_mut() {
                Some((_, map)) => map,
                None => &mut doc.global,
            };
            if scope
                .entries
                .insert(key.clone(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        if let Some(done) = current.take() {
            doc.sections.push(done);
        }
        Ok(doc)
    }
}

impl KvMap {
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).unwrap_or(default)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.raw(key).ok_or_else(|| Error::ConfigKey {
            key: key.to_string(),
            message: "missing required key".into(),
        })
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.bad(key, v, "a number")),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.bad(key, v, "an unsigned integer")),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.bad(key, v, "an unsigned integer")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") | Some("yes") | Some("1") => Ok(true),
            Some("false") | Some("no") | Some("0") => Ok(false),
            Some(v) => Err(self.bad(key, v, "true/false")),
        }
    }

    /// Comma-separated list of numbers, e.g. `pool_freq = 8,4,2`.
    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| self.bad(key, v, "a comma-separated integer list")),
        }
    }

    /// Keys that were present in the file but not in `known`; used to reject typos.
    pub fn unknown_keys(&self, known: &[&str]) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| !known.contains(&k.as_str()))
            .cloned()
            .collect()
    }

    fn bad(&self, key: &str, value: &str, wanted: &str) -> Error {
        Error::ConfigKey {
            key: key.to_string(),
            message: format!("expected {wanted}, got {value:?}"),
        }
    }
}
