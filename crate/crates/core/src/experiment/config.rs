use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Flat `key = value` text with optional `[section]` headers. Keys before
/// the first header belong to the top-level section `""`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = ConfigFile::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: i + 1, message };
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(format!("unterminated section header `{line}`")))?
                    .trim();
                if name.is_empty() {
                    return Err(parse_err("empty section name".into()));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(parse_err("empty key".into()));
            }
            let entries = out.sections.entry(section.clone()).or_default();
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(parse_err(format!("duplicate key `{key}`")));
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets or replaces a value, as command-line overrides do.
    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.sections
            .iter()
            .flat_map(|(s, kv)| kv.keys().map(move |k| (s.as_str(), k.as_str())))
    }
}

/// Typed access to a [`ConfigFile`] that remembers which keys were read and
/// the value each one resolved to, defaults included.
#[derive(Debug)]
pub struct Settings {
    file: ConfigFile,
    used: RefCell<BTreeSet<(String, String)>>,
    resolved: RefCell<BTreeMap<String, BTreeMap<String, String>>>,
}

impl Settings {
    pub fn new(file: ConfigFile) -> Self {
        Self {
            file,
            used: RefCell::new(BTreeSet::new()),
            resolved: RefCell::new(BTreeMap::new()),
        }
    }

    fn record(&self, section: &str, key: &str, value: String) {
        self.resolved
            .borrow_mut()
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value);
    }

    /// The value of `key`, or `None` when absent. Present values are echoed.
    pub fn optional<T>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let Some(raw) = self.file.get(section, key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert((section.to_string(), key.to_string()));
        let value = raw.parse::<T>().map_err(|e| {
            Error::Config(format!("{}{key} = {raw}: {e}", section_prefix(section)))
        })?;
        self.record(section, key, raw.to_string());
        Ok(Some(value))
    }

    /// The value of `key`, falling back to `default`; either way it is echoed.
    pub fn value<T>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        match self.optional(section, key)? {
            Some(v) => Ok(v),
            None => {
                self.record(section, key, default.to_string());
                Ok(default)
            }
        }
    }

    /// Echoes a derived value that was not read under this key.
    pub fn note(&self, section: &str, key: &str, value: impl fmt::Display) {
        self.record(section, key, value.to_string());
    }

    /// Fails on any key that no reader asked for.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .file
            .keys()
            .filter(|(s, k)| !used.contains(&(s.to_string(), k.to_string())))
            .map(|(s, k)| format!("{}{k}", section_prefix(s)))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown configuration keys: {}", unknown.join(", "))))
        }
    }

    /// Every resolved value in the input format; parsing it back reproduces the run.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let resolved = self.resolved.borrow();
        if let Some(top) = resolved.get("") {
            for (k, v) in top {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        for (s, kv) in resolved.iter().filter(|(s, _)| !s.is_empty()) {
            out.push_str(&format!("\n[{s}]\n"));
            for (k, v) in kv {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

fn section_prefix(section: &str) -> String {
    if section.is_empty() {
        String::new()
    } else {
        format!("[{section}] ")
    }
}

/// Comma-separated values.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: fmt::Display> fmt::Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
