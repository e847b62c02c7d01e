//! Plain-text `key = value` configuration files.
//!
//! Lines are `key = value`; blank lines and `#` comments are ignored. This is
//! the format of both the synthetic-data config and the training config.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, found `{text}`")]
    BadLine { line: usize, text: String },
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {ty}")]
    BadValue {
        key: String,
        value: String,
        ty: &'static str,
    },
    #[error("key `{key}`: invalid value `{value}` ({reason})")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
}

/// Parsed key/value config with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if values.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey(key));
            }
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn parse_with<T: std::str::FromStr>(
        &self,
        key: &str,
        ty: &'static str,
    ) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                ty,
            }),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.parse_with(key, "usize")?.unwrap_or(default))
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self.parse_with(key, "u64")?.unwrap_or(default))
    }

    pub fn get_i64(&self, key: &str, default: i64) -> Result<i64, ConfigError> {
        Ok(self.parse_with(key, "i64")?.unwrap_or(default))
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.parse_with(key, "f64")?.unwrap_or(default))
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        Ok(self.parse_with(key, "bool")?.unwrap_or(default))
    }

    /// Canonical `key = value` rendering (sorted by key), for manifests.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Shapes shared by the selection and prediction networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Rows of each embedding table (vocabulary size incl. the padding row).
    pub vocab_size: usize,
    /// Embedding width d.
    pub embed_dim: usize,
    /// Self-attention heads h.
    pub heads: usize,
    /// Fields per target/behavior including the user field.
    pub n_fields: usize,
    /// Hidden width of the selection MLP.
    pub sel_hidden: usize,
    /// Hidden widths of the behavior-vs-target scoring network.
    pub att_hidden: (usize, usize),
    /// Hidden widths of the output MLP (the final layer is width 1).
    pub mlp_hidden: (usize, usize),
}

impl ModelDims {
    pub fn new(vocab_size: usize, embed_dim: usize, heads: usize, n_fields: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            heads,
            n_fields,
            sel_hidden: 32,
            att_hidden: (64, 32),
            mlp_hidden: (200, 80),
        }
    }

    /// Candidate features for selection: every target field except user id.
    pub fn k_q(&self) -> usize {
        self.n_fields - 1
    }

    /// Width of one embedded target or behavior: n_fields * d.
    pub fn field_vec(&self) -> usize {
        self.n_fields * self.embed_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let cfg = KvConfig::parse_str("# comment\nusers = 10\n\nrho = 0.9\nname = tiny\n").unwrap();
        assert_eq!(cfg.get_usize("users", 0).unwrap(), 10);
        assert_eq!(cfg.get_f64("rho", 0.0).unwrap(), 0.9);
        assert_eq!(cfg.get("name"), Some("tiny"));
        assert_eq!(cfg.get_usize("absent", 7).unwrap(), 7);
    }

    #[test]
    fn rejects_malformed_lines_and_duplicates() {
        assert!(matches!(
            KvConfig::parse_str("nonsense line"),
            Err(ConfigError::BadLine { line: 1, .. })
        ));
        assert!(matches!(
            KvConfig::parse_str("a = 1\na = 2\n"),
            Err(ConfigError::DuplicateKey(_))
        ));
    }

    #[test]
    fn rejects_bad_typed_values() {
        let cfg = KvConfig::parse_str("users = ten\n").unwrap();
        assert!(matches!(
            cfg.get_usize("users", 0),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn render_is_stable() {
        let cfg = KvConfig::parse_str("b = 2\na = 1\n").unwrap();
        assert_eq!(cfg.render(), "a = 1\nb = 2\n");
    }
}
