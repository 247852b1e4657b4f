//! Flat `key = value` scenario files with dotted section prefixes.
//!
//! Lines are `key = value`; `#` starts a comment; values may be double-quoted.
//! A `[section]` header prefixes the keys that follow it with `section.`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use scl_core::trig::TrigPolynomial;
use scl_core::{PeriodicField, PeriodicGrid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("missing required key `{key}`")]
    Missing { key: String },
    #[error("unknown key `{key}`")]
    Unknown { key: String },
    #[error("bad value `{value}` for key `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Parsed key/value pairs in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line: i + 1, reason: "unclosed section header".into() })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, reason: "expected `key = value`".into() })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, reason: "empty key".into() });
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            let v = v.trim();
            let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
            if entries.insert(key.clone(), v.to_string()).is_some() {
                return Err(ConfigError::Syntax { line: i + 1, reason: format!("duplicate key `{key}`") });
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Sorted `key = "value"` lines; equal configs give equal text.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = \"{v}\"\n")).collect()
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(ConfigError::Unknown { key: k.to_string() }),
            None => Ok(()),
        }
    }

    pub fn required(&self, key: &str) -> Result<&str, ConfigError> {
        self.raw(key).ok_or_else(|| ConfigError::Missing { key: key.to_string() })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|v| parse_value(key, v)).transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        parse_value(key, self.required(key)?)
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_value(key, s)).collect())
            .transpose()
    }

    pub fn field(&self, key: &str, grid: &PeriodicGrid) -> Result<Option<PeriodicField>, ConfigError> {
        self.raw(key).map(|v| FieldExpr::parse(key, v).map(|e| e.to_field(grid))).transpose()
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: v.to_string(),
        reason: e.to_string(),
    })
}

/// Sum of terms `const:c`, `sin:j:a`, `cos:j:a` joined by `+`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldExpr {
    pub constant: f64,
    pub modes: TrigPolynomial,
}

impl FieldExpr {
    pub fn parse(key: &str, text: &str) -> Result<Self, ConfigError> {
        let bad = |reason: String| ConfigError::BadValue { key: key.to_string(), value: text.to_string(), reason };
        let mut constant = 0.0;
        let mut modes = TrigPolynomial::zero(1);
        if text.trim().is_empty() {
            return Err(bad("empty expression".into()));
        }
        for term in text.split('+') {
            let parts: Vec<&str> = term.trim().split(':').map(str::trim).collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
            match parts.as_slice() {
                ["const", c] => constant += num(c)?,
                [kind @ ("sin" | "cos"), j, a] => {
                    let j: usize = j.parse().map_err(|_| bad(format!("mode `{j}` is not a positive integer")))?;
                    if j == 0 {
                        return Err(bad("mode must be at least 1".into()));
                    }
                    let a = num(a)?;
                    let p = if *kind == "sin" { TrigPolynomial::sin(j, a) } else { TrigPolynomial::cos(j, a) };
                    modes.add_scaled(1.0, &p);
                }
                _ => return Err(bad(format!("cannot read term `{}`", term.trim()))),
            }
        }
        Ok(FieldExpr { constant, modes })
    }

    pub fn to_field(&self, grid: &PeriodicGrid) -> PeriodicField {
        &self.modes.to_field(grid) + &PeriodicField::constant(grid, self.constant)
    }
}
