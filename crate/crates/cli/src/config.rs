//! Service configuration: a TOML file with environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use smstriage_core::gateway::DEFAULT_CHAR_LIMIT;
use smstriage_core::labeling::DEFAULT_LEASE_SECS;
use smstriage_core::{Error, Result};

pub const ENV_LISTEN: &str = "SMSTRIAGE_LISTEN";
pub const ENV_DATA_DIR: &str = "SMSTRIAGE_DATA_DIR";
pub const ENV_CHAR_LIMIT: &str = "SMSTRIAGE_CHAR_LIMIT";
pub const ENV_FSYNC: &str = "SMSTRIAGE_FSYNC";

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, rename_all = "snake_case", deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    /// Omit to run without persistence.
    pub data_dir: Option<PathBuf>,
    pub default_char_limit: usize,
    pub fsync: bool,
    pub lease_secs: i64,
    /// Seconds before a discarded text may be queued again; unset means never.
    pub discard_cooldown_secs: Option<i64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            default_char_limit: DEFAULT_CHAR_LIMIT,
            fsync: false,
            lease_secs: DEFAULT_LEASE_SECS,
            discard_cooldown_secs: None,
        }
    }
}

impl ServiceConfig {
    /// Reads `path` if given, then applies environment overrides; the
    /// environment wins.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        Self::load_with(path, |k| std::env::var(k).ok())
    }

    pub fn load_with(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text)
                    .map_err(|e| Error::Validation(format!("{}: {e}", p.display())))?
            }
            None => ServiceConfig::default(),
        };
        if let Some(v) = env(ENV_LISTEN) {
            config.listen = parse_env(ENV_LISTEN, &v)?;
        }
        if let Some(v) = env(ENV_DATA_DIR) {
            config.data_dir = (!v.is_empty()).then(|| PathBuf::from(v));
        }
        if let Some(v) = env(ENV_CHAR_LIMIT) {
            config.default_char_limit = parse_env(ENV_CHAR_LIMIT, &v)?;
        }
        if let Some(v) = env(ENV_FSYNC) {
            config.fsync = parse_env(ENV_FSYNC, &v)?;
        }
        if config.default_char_limit == 0 {
            return Err(Error::Validation(
                "default_char_limit must be at least 1".into(),
            ));
        }
        if config.lease_secs <= 0 {
            return Err(Error::Validation("lease_secs must be positive".into()));
        }
        Ok(config)
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("{key}={value:?} is not valid")))
}
