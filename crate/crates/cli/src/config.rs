//! Plain-text `key = value` defaults for command-line flags.

use std::collections::BTreeMap;
use std::path::Path;

use cardiaq::{Error, Result};

/// Parsed config file; keys are flag names without the leading dashes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, file: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parsed = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .filter(|(k, v)| !k.is_empty() && !v.is_empty());
            let Some((key, value)) = parsed else {
                return Err(Error::Parse {
                    file: file.to_path_buf(),
                    line: i + 1,
                    content: raw.to_string(),
                });
            };
            entries.insert(key.trim_start_matches("--").to_string(), value.to_string());
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::parse(&text, path)
    }

    /// Flags for every entry not already given on the command line, to be
    /// placed right after the subcommand name.
    pub fn missing_flags(&self, argv: &[String]) -> Vec<String> {
        let given = |key: &str| {
            let flag = format!("--{key}");
            let prefixed = format!("{flag}=");
            argv.iter().any(|a| *a == flag || a.starts_with(&prefixed))
        };
        let mut out = Vec::new();
        for (k, v) in &self.entries {
            if k != "config" && !given(k) {
                out.push(format!("--{k}"));
                out.push(v.clone());
            }
        }
        out
    }
}
