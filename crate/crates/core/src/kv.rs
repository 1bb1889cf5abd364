//! Flat `key=value` text used for model parameters and workload specs.
//! `#` starts a comment; blank lines are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KvError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("missing key {0:?}")]
    Missing(String),
    #[error("key {key:?}: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("unknown key {0:?}")]
    Unknown(String),
}

/// Parsed file. Keys remember their line for error messages.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<KvMap, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(KvError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            if entries
                .insert(k.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(KvError::Duplicate {
                    line: i + 1,
                    key: k.to_string(),
                });
            }
        }
        Ok(KvMap { entries })
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| KvError::BadValue {
                key: key.to_string(),
                value: v.clone(),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.get(key)?
            .ok_or_else(|| KvError::Missing(key.to_string()))
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries.iter().filter_map(move |(k, v)| {
            k.strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('.'))
                .map(|rest| (rest, v.as_str()))
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// Parses a `k<N>` suffix such as `k10`.
pub fn parse_k(s: &str) -> Option<u32> {
    s.strip_prefix('k')?.parse().ok()
}
