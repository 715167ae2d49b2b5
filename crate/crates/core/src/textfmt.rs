//! Versioned `key=value` text documents used for manifests, checkpoints and configs.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "empty key".into(),
                });
            }
            doc.set(k, v.trim());
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn set_vec(&mut self, key: &str, values: &[f64]) {
        let mut s = String::with_capacity(values.len() * 20);
        for (j, v) in values.iter().enumerate() {
            if j > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{v}");
        }
        self.set(key, s);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing key {key:?}")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("key {key:?}: not a number: {v:?}")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("key {key:?}: not an integer: {v:?}")))
    }

    pub fn get_vec(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.require(key)?;
        v.split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Config(format!("key {key:?}: bad number {t:?}")))
            })
            .collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Checks the `format` and `version` header written by [`KvDoc::with_header`].
    pub fn expect_header(&self, format: &str, version: u32) -> Result<()> {
        let f = self.require("format")?;
        if f != format {
            return Err(Error::Config(format!("expected format {format}, found {f}")));
        }
        let v = self.get_usize("version")?;
        if v != version as usize {
            return Err(Error::Config(format!(
                "unsupported {format} version {v} (expected {version})"
            )));
        }
        Ok(())
    }

    pub fn with_header(format: &str, version: u32) -> Self {
        let mut doc = KvDoc::new();
        doc.set("format", format);
        doc.set("version", version);
        doc
    }

    /// SHA-256 over the sorted `key=value` lines.
    pub fn hash(&self) -> String {
        let mut lines: Vec<String> = self.entries.iter().map(|(k, v)| format!("{k}={v}")).collect();
        lines.sort();
        let mut h = Sha256::new();
        for l in &lines {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Lowercase hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
