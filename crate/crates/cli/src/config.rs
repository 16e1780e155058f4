//! Flat `key = value` files. Command-line flags win over file values.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default)]
pub struct FlatConfig {
    path: Option<PathBuf>,
    values: BTreeMap<String, (usize, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl FlatConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.path = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected key=value", i + 1);
            };
            let key = normalize(k);
            if key.is_empty() {
                bail!("line {}: empty key", i + 1);
            }
            if values.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                bail!("line {}: duplicate key {key}", i + 1);
            }
        }
        Ok(FlatConfig { path: None, values })
    }

    /// Resolves one setting: the flag if given, else the file value.
    pub fn take<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let from_file = self.values.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match from_file {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("{}line {line}: {key}: {e}", self.origin())),
        }
    }

    fn origin(&self) -> String {
        self.path
            .as_ref()
            .map(|p| format!("{}: ", p.display()))
            .unwrap_or_default()
    }

    /// Fails on keys that no setting consumed.
    pub fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.values.iter().next() {
            bail!("{}line {line}: unknown key {key}", self.origin());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let mut c = FlatConfig::parse("# run\nseed = 7\nlr=0.01\n\nbatch-size = 8").unwrap();
        assert_eq!(c.take::<u64>("seed", Some(9)).unwrap(), Some(9));
        assert_eq!(c.take::<f64>("lr", None).unwrap(), Some(0.01));
        assert_eq!(c.take::<usize>("batch_size", None).unwrap(), Some(8));
        assert_eq!(c.take::<usize>("epochs", None).unwrap(), None);
        c.finish().unwrap();
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(FlatConfig::parse("seed 7").is_err());
        assert!(FlatConfig::parse("seed=1\nseed=2").is_err());
        assert!(FlatConfig::parse("=3").is_err());
        let mut c = FlatConfig::parse("seed=x").unwrap();
        assert!(c.take::<u64>("seed", None).is_err());
    }

    #[test]
    fn leftover_keys_are_errors() {
        let c = FlatConfig::parse("sede=1").unwrap();
        let msg = c.finish().unwrap_err().to_string();
        assert!(msg.contains("unknown key sede"), "{msg}");
    }
}
