//! `key = value` run configuration with flag overrides and manifests.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

pub const MANIFEST: &str = "manifest";

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected `key = value`", n + 1))
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", n + 1)));
        }
        out.insert(key.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Fully resolved settings of one command: defaults, then the config file,
/// then command-line flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    command: &'static str,
    keys: Vec<&'static str>,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn resolve(
        command: &'static str,
        defaults: &[(&'static str, &str)],
        config: Option<&Path>,
        flags: Vec<(&'static str, Option<String>)>,
    ) -> Result<Self, CliError> {
        let keys: Vec<&'static str> = defaults.iter().map(|(k, _)| *k).collect();
        let mut values: BTreeMap<String, String> = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            for (k, v) in parse_config(&text)? {
                if k == "command" {
                    if v != command {
                        return Err(CliError::Usage(format!(
                            "config is for `{v}`, not `{command}`"
                        )));
                    }
                    continue;
                }
                if !values.contains_key(&k) {
                    return Err(CliError::Usage(format!(
                        "unknown key `{k}` for `{command}`"
                    )));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in flags {
            debug_assert!(values.contains_key(k), "flag {k} has no default");
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        }
        Ok(Self {
            command,
            keys,
            values,
        })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid {key} `{raw}`: {e}")))
    }

    /// Comma-separated list; empty string is an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Usage(format!("invalid {key} entry `{s}`: {e}")))
            })
            .collect()
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        let out = self.raw("out");
        if out.is_empty() {
            return Err(CliError::Usage(
                "an output directory is required (--out)".into(),
            ));
        }
        let dir = PathBuf::from(out);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{out}: {e}")))?;
        Ok(dir)
    }

    pub fn manifest_text(&self) -> String {
        let mut s = format!("command = {}\n", self.command);
        for k in &self.keys {
            s.push_str(&format!("{k} = {}\n", self.raw(k)));
        }
        s
    }

    pub fn write_manifest(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST);
        std::fs::write(&path, self.manifest_text())
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Joins a repeated flag into the comma-separated config form.
pub fn joined<T: ToString>(items: &[T]) -> Option<String> {
    if items.is_empty() {
        None
    } else {
        Some(items.iter().map(T::to_string).collect::<Vec<_>>().join(","))
    }
}

pub fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

/// `true` when set; an unset boolean flag leaves the lower layers in force.
pub fn flag(set: bool) -> Option<String> {
    set.then(|| "true".to_string())
}

/// `index:magnitude` pair.
pub fn parse_pair(s: &str) -> Result<(usize, f32), CliError> {
    let bad = || CliError::Usage(format!("expected index:magnitude, got `{s}`"));
    let (i, m) = s.split_once(':').ok_or_else(bad)?;
    Ok((
        i.trim().parse().map_err(|_| bad())?,
        m.trim().parse().map_err(|_| bad())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_whitespace() {
        let m = parse_config("# header\n rows = 4 # trailing\n\ncols=8\n").unwrap();
        assert_eq!(m["rows"], "4");
        assert_eq!(m["cols"], "8");
        assert!(parse_config("no equals sign").is_err());
        assert!(parse_config(" = 3").is_err());
    }

    #[test]
    fn flags_override_file_and_manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "rows = 10\ncols = 20\n").unwrap();
        let defaults = [("rows", "1"), ("cols", "1"), ("out", "")];
        let cfg = RunConfig::resolve(
            "gen",
            &defaults,
            Some(&path),
            vec![("cols", Some("30".into())), ("rows", None)],
        )
        .unwrap();
        assert_eq!(cfg.get::<usize>("rows").unwrap(), 10);
        assert_eq!(cfg.get::<usize>("cols").unwrap(), 30);
        std::fs::write(&path, cfg.manifest_text()).unwrap();
        let again = RunConfig::resolve("gen", &defaults, Some(&path), vec![]).unwrap();
        assert_eq!(again.manifest_text(), cfg.manifest_text());
        assert!(RunConfig::resolve("train", &defaults, Some(&path), vec![]).is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "bogus = 1\n").unwrap();
        let defaults = [("rows", "x")];
        assert!(matches!(
            RunConfig::resolve("gen", &defaults, Some(&path), vec![]),
            Err(CliError::Usage(_))
        ));
        let cfg = RunConfig::resolve("gen", &defaults, None, vec![]).unwrap();
        assert!(matches!(cfg.get::<usize>("rows"), Err(CliError::Usage(_))));
        assert_eq!(parse_pair("3:120").unwrap(), (3, 120.0));
        assert!(parse_pair("3").is_err());
    }
}
