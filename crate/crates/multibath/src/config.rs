//! Flat `section.key = value` configuration text: identifiers, numbers,
//! comma lists and bare strings, with `#` comments. Typed accessors
//! report the offending key and line on errors.

use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { key: String, line: usize },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}` (line {line}): cannot parse `{value}` as {ty}")]
    BadValue {
        key: String,
        line: usize,
        value: String,
        ty: &'static str,
    },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, (String, usize)>,
    raw: String,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: stripped.to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Malformed {
                    line,
                    text: stripped.to_string(),
                });
            }
            if entries.insert(key.clone(), (value, line)).is_some() {
                return Err(ConfigError::Duplicate { key, line });
            }
        }
        Ok(Self {
            entries,
            raw: text.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Original text, kept verbatim for the run manifest.
    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Overrides or inserts a key (used by sweeps); the raw snapshot is
    /// extended so manifests stay replayable.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
        self.raw = format!("{}\n{} = {}", self.raw.trim_end(), key, value);
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn str(&self, key: &str) -> Result<&str, ConfigError> {
        self.entries
            .get(key)
            .map(|(v, _)| v.as_str())
            .ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.entries
            .get(key)
            .map(|(v, _)| v.as_str())
            .unwrap_or(default)
    }

    fn parse_as<T: std::str::FromStr>(
        &self,
        key: &str,
        ty: &'static str,
    ) -> Result<T, ConfigError> {
        let (value, line) = self
            .entries
            .get(key)
            .ok_or_else(|| ConfigError::Missing(key.to_string()))?;
        value.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            line: *line,
            value: value.clone(),
            ty,
        })
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.parse_as(key, "a number")
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        if self.has(key) {
            self.f64(key)
        } else {
            Ok(default)
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.parse_as(key, "an unsigned integer")
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        if self.has(key) {
            self.usize(key)
        } else {
            Ok(default)
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.parse_as(key, "an unsigned integer")
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        if self.has(key) {
            self.u64(key)
        } else {
            Ok(default)
        }
    }

    /// Comma-separated list of numbers.
    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let (value, line) = self
            .entries
            .get(key)
            .ok_or_else(|| ConfigError::Missing(key.to_string()))?;
        value
            .split(',')
            .map(|tok| {
                tok.trim().parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    line: *line,
                    value: value.clone(),
                    ty: "a comma list of numbers",
                })
            })
            .collect()
    }
}
