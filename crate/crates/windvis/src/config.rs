//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are kept verbatim so that a
//! parsed file dumps back to the same bytes. Keys are case-sensitive and
//! `-` is treated as `_`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Line {
    Verbatim(String),
    Entry {
        key: String,
        value: String,
        raw: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    lines: Vec<Line>,
    trailing_newline: bool,
    index: BTreeMap<String, usize>,
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Config {
    /// Parses `text`, rejecting lines without `=`, empty keys, duplicate
    /// keys and keys outside `known` (when given).
    pub fn parse(text: &str, known: Option<&[&str]>) -> Result<Self> {
        let mut cfg = Config {
            trailing_newline: text.ends_with('\n'),
            ..Config::default()
        };
        let body = text.strip_suffix('\n').unwrap_or(text);
        if text.is_empty() {
            return Ok(cfg);
        }
        for (n, raw) in body.split('\n').enumerate() {
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                cfg.lines.push(Line::Verbatim(raw.to_string()));
                continue;
            }
            let bad = |reason: String| Error::Usage(format!("config line {}: {reason}", n + 1));
            let (k, v) = raw
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got {trimmed:?}")))?;
            let key = normalize_key(k);
            if key.is_empty() {
                return Err(bad("empty key".into()));
            }
            if let Some(known) = known {
                if !known.contains(&key.as_str()) {
                    return Err(bad(format!("unknown key {key:?}")));
                }
            }
            if cfg.index.insert(key.clone(), cfg.lines.len()).is_some() {
                return Err(bad(format!("duplicate key {key:?}")));
            }
            cfg.lines.push(Line::Entry {
                key,
                value: v.trim().trim_end_matches('\r').trim().to_string(),
                raw: raw.to_string(),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, known: Option<&[&str]>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, known)
    }

    /// Canonical text for `entries`, one `key = value` per line.
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let text: String = entries
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        Self::parse(&text, None).expect("canonical entries parse")
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        let i = *self.index.get(&normalize_key(key))?;
        match &self.lines[i] {
            Line::Entry { value, .. } => Some(value),
            Line::Verbatim(_) => None,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.lines.iter().filter_map(|l| match l {
            Line::Entry { key, value, .. } => Some((key.as_str(), value.as_str())),
            Line::Verbatim(_) => None,
        })
    }

    pub fn dump(&self) -> String {
        let mut out = self
            .lines
            .iter()
            .map(|l| match l {
                Line::Verbatim(s) | Line::Entry { raw: s, .. } => s.as_str(),
            })
            .collect::<Vec<_>>()
            .join("\n");
        if self.trailing_newline {
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lookups() {
        let c = Config::parse("# comment\nlr = 0.05\n\nclips-per-speed=7\n", None).unwrap();
        assert_eq!(c.get("lr"), Some("0.05"));
        assert_eq!(c.get("clips_per_speed"), Some("7"));
        assert_eq!(c.get("clips-per-speed"), Some("7"));
        assert_eq!(c.get("seed"), None);
        assert_eq!(c.entries().count(), 2);
    }

    #[test]
    fn rejections() {
        assert!(Config::parse("lr 0.1\n", None).is_err());
        assert!(Config::parse("= 3\n", None).is_err());
        assert!(Config::parse("a = 1\na = 2\n", None).is_err());
        assert!(Config::parse("lr = 1\n", Some(&["seed"])).is_err());
    }

    #[test]
    fn dump_is_identity() {
        for text in [
            "",
            "a = 1",
            "a = 1\n",
            "\n\n# x\n a=  2 \r\nb = c\n",
            "# only\n",
        ] {
            assert_eq!(Config::parse(text, None).unwrap().dump(), text);
        }
    }

    proptest! {
        #[test]
        fn dump_round_trips(lines in prop::collection::vec(
            prop_oneof![
                "[a-z_]{1,8} ?= ?[a-z0-9.:,]{0,8}",
                "#[ -~]{0,12}",
                Just(String::new()),
            ], 0..12),
            newline in any::<bool>())
        {
            // keep keys unique
            let mut seen = std::collections::HashSet::new();
            let lines: Vec<String> = lines
                .into_iter()
                .filter(|l| l.starts_with('#') || l.is_empty() || seen.insert(l.split('=').next().unwrap().trim().to_string()))
                .collect();
            let mut text = lines.join("\n");
            if newline && !text.is_empty() {
                text.push('\n');
            }
            let parsed = Config::parse(&text, None).unwrap();
            prop_assert_eq!(parsed.dump(), text.clone());
            prop_assert_eq!(Config::parse(&parsed.dump(), None).unwrap(), parsed);
        }
    }
}
