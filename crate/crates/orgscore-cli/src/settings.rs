//! Defaults file and environment handling. The config file is
//! line-oriented `key = value`; `#` starts a comment. Flags always win
//! over the file; the `ORGSCORE_SEED` environment variable supplies the
//! seed when neither a flag nor the file does.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

pub const SEED_ENV: &str = "ORGSCORE_SEED";

#[derive(Debug, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("config file {}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "config file {} line {}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                )));
            };
            map.insert(key.trim().to_owned(), value.trim().to_owned());
        }
        Ok(Settings { map })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    /// Typed lookup; a present-but-unparseable value is a usage error.
    pub fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| {
                CliError::usage(format!("config key `{key}`: cannot parse `{v}`: {e}"))
            }),
        }
    }
}

/// flag > config file > built-in default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// flag > config file > `ORGSCORE_SEED` > 0.
pub fn resolve_seed(flag: Option<u64>, settings: &Settings) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = settings.get::<u64>("seed")? {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|e| CliError::usage(format!("{SEED_ENV}={v}: {e}"))),
        Err(_) => Ok(0),
    }
}
