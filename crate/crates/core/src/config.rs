//! `key = value` run configuration with overrides and a resolved dump.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const RESOLVED_CONFIG: &str = "config.resolved";

/// Parameters for one command. Every value read through [`RunConfig::resolve`]
/// is recorded, defaults included, so the dump alone reproduces the run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Config(format!("invalid key {key:?}")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Reads a typed value, storing `default` when the key is absent.
    pub fn resolve<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T> {
        self.used.insert(key.to_string());
        match self.values.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
            None => {
                self.values.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    /// Reads a value that has no default.
    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.used.insert(key.to_string());
        let v = self
            .values
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))?;
        v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    /// Fails on keys no command read, which are most likely typos.
    pub fn check_unused(&self) -> Result<()> {
        match self.values.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(Error::Config(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_override_resolve() {
        let mut c = RunConfig::parse("# run\nepochs = 5\n\nlr=0.01 # fast\n").unwrap();
        c.apply_overrides(&["epochs=7"]).unwrap();
        assert_eq!(c.resolve("epochs", 30usize).unwrap(), 7);
        assert_eq!(c.resolve("lr", 1e-3).unwrap(), 0.01);
        assert_eq!(c.resolve("batch_size", 64usize).unwrap(), 64);
        assert_eq!(c.to_text(), "batch_size = 64\nepochs = 7\nlr = 0.01\n");
        c.check_unused().unwrap();
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again.values, c.values);
    }

    #[test]
    fn errors() {
        assert!(matches!(RunConfig::parse("novalue"), Err(Error::Config(_))));
        let mut c = RunConfig::parse("epochs = many\ntypo = 1").unwrap();
        assert!(c.resolve("epochs", 1usize).is_err());
        assert!(c.check_unused().is_err());
        assert!(c.require::<u64>("seed").is_err());
        assert!(c.apply_overrides(&["nokey"]).is_err());
    }
}
