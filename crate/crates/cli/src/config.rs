//! Flat `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are
//! case-sensitive; `-` and `_` are interchangeable. When a key is set more
//! than once the last assignment wins, which is how command-line overrides
//! take precedence over the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value, got {line:?}", lineno + 1))?;
            if k.trim().is_empty() {
                bail!("line {}: empty key", lineno + 1);
            }
            cfg.set(k, v.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize_key(key), value.into());
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
        self.set(k, v.trim());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize_key(key)).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("config key {key}: cannot parse {v:?}: {e}")),
        }
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| anyhow!("missing required config key {key}"))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    /// Comma-separated list of values.
    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<T>().map_err(|e| anyhow!("config key {key}: cannot parse {s:?}: {e}")))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut cfg = Config::parse("# comment\nlambda = 0.5\n\nmax-iters=10\nout = runs/a b\n").unwrap();
        assert_eq!(cfg.get::<f64>("lambda").unwrap(), Some(0.5));
        assert_eq!(cfg.require::<usize>("max_iters").unwrap(), 10);
        assert_eq!(cfg.raw("out"), Some("runs/a b"));
        cfg.apply_override("lambda=0.25").unwrap();
        assert_eq!(cfg.get::<f64>("lambda").unwrap(), Some(0.25));
        assert_eq!(cfg.get_or::<u64>("seed", 7).unwrap(), 7);
    }

    #[test]
    fn later_assignment_wins() {
        let cfg = Config::parse("seed = 1\nseed = 2").unwrap();
        assert_eq!(cfg.require::<u64>("seed").unwrap(), 2);
    }

    #[test]
    fn lists() {
        let cfg = Config::parse("sigmas = 1.0, 1.5 ,2").unwrap();
        assert_eq!(cfg.list::<f64>("sigmas").unwrap(), Some(vec![1.0, 1.5, 2.0]));
        assert_eq!(cfg.list::<f64>("other").unwrap(), None);
    }

    #[test]
    fn errors() {
        assert!(Config::parse("novalue").is_err());
        assert!(Config::parse("= 3").is_err());
        let cfg = Config::parse("lambda = abc").unwrap();
        assert!(cfg.get::<f64>("lambda").is_err());
        assert!(cfg.require::<f64>("missing").is_err());
        assert!(Config::new().apply_override("x").is_err());
    }
}
