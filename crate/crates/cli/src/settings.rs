use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use qmatch::data::Manifest;

/// Resolves options as flag, then config file, then default, and records
/// every resolved value as `config.<key>` in a manifest.
pub struct Settings {
    file: Manifest,
    pub resolved: Manifest,
}

impl Settings {
    pub fn new(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(p) => Manifest::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => Manifest::new(),
        };
        Ok(Self {
            file,
            resolved: Manifest::new(),
        })
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(s)) => s
                .parse()
                .map_err(|e| anyhow::anyhow!("config value `{key}={s}`: {e}"))?,
            (None, None) => default,
        };
        self.resolved.set(format!("config.{key}"), &v);
        Ok(v)
    }

    /// Like [`Settings::get`] without a default.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match (flag, self.file.get(key)) {
            (Some(v), _) => Some(v),
            (None, Some(s)) => Some(
                s.parse()
                    .map_err(|e| anyhow::anyhow!("config value `{key}={s}`: {e}"))?,
            ),
            (None, None) => None,
        };
        if let Some(v) = &v {
            self.resolved.set(format!("config.{key}"), v);
        }
        Ok(v)
    }

    /// Switch flags can only turn an option on.
    pub fn flag(&mut self, key: &str, set: bool) -> Result<bool> {
        self.get(key, set.then_some(true), false)
    }
}

/// Comma-separated list value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| x.parse().map_err(|e: T::Err| format!("`{x}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}
