//! Line-oriented `key = value` run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    /// Relative paths in the file resolve against this directory.
    base: PathBuf,
    origin: String,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), base)
    }

    pub fn parse(text: &str, origin: &str, base: PathBuf) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{origin}:{}: expected 'key = value', got '{line}'",
                    i + 1
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(CliError::Usage(format!("{origin}:{}: empty key", i + 1)));
            }
            if values.insert(key.to_owned(), value.trim().to_owned()).is_some() {
                return Err(CliError::Usage(format!("{origin}:{}: duplicate key '{key}'", i + 1)));
            }
        }
        Ok(ConfigFile {
            values,
            base,
            origin: origin.to_owned(),
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Typed lookup; a present but unparsable value is a usage error.
    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Usage(format!("{}: bad value '{v}' for '{key}': {e}", self.origin)))
            })
            .transpose()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|v| self.base.join(v))
    }

    /// Entries `prefix.<suffix> = value`, as (suffix, value).
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, String)> {
        let dotted = format!("{prefix}.");
        self.values
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&dotted).map(|s| (s.to_owned(), v.clone())))
            .collect()
    }

    pub fn resolve(&self, value: &str) -> PathBuf {
        self.base.join(value)
    }
}

/// Flag value if given, else the config entry.
pub fn pick<T: FromStr>(flag: Option<T>, config: &ConfigFile, key: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => config.get(key),
    }
}

pub fn pick_or<T: FromStr>(flag: Option<T>, config: &ConfigFile, key: &str, default: T) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    Ok(pick(flag, config, key)?.unwrap_or(default))
}

pub fn pick_path(flag: Option<PathBuf>, config: &ConfigFile, key: &str) -> Option<PathBuf> {
    flag.or_else(|| config.path(key))
}

pub fn require_path(flag: Option<PathBuf>, config: &ConfigFile, key: &str) -> CliResult<PathBuf> {
    pick_path(flag, config, key)
        .ok_or_else(|| CliError::Usage(format!("missing --{key} (or '{key} = ...' in the config file)")))
}
