use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gdm_core::aggregation::ThresholdValues;
use gdm_core::engine::EngineConfig;
use gdm_core::policy::DEFAULT_MAX_ROUNDS;
use gdm_core::{Fraction, UserId};
use serde::Deserialize;
use thiserror::Error;

/// Environment variable naming the configuration file.
pub const CONFIG_ENV: &str = "GDM_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdOverrides {
    pub low: Option<Fraction>,
    pub medium: Option<Fraction>,
    pub high: Option<Fraction>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Event log file; the log is kept in memory when absent.
    #[serde(default)]
    pub log: Option<PathBuf>,
    /// Bearer token to user id.
    #[serde(default)]
    pub tokens: BTreeMap<String, UserId>,
    #[serde(default)]
    pub thresholds: ThresholdOverrides,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default = "default_true")]
    pub fsync: bool,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}
fn default_port() -> u16 {
    8080
}
fn default_max_rounds() -> u32 {
    DEFAULT_MAX_ROUNDS
}
fn default_snapshot_every() -> u64 {
    256
}
fn default_true() -> bool {
    true
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: default_bind(),
            port: default_port(),
            log: None,
            tokens: BTreeMap::new(),
            thresholds: ThresholdOverrides::default(),
            max_rounds: default_max_rounds(),
            snapshot_every: default_snapshot_every(),
            fsync: true,
        }
    }
}

impl ServerConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ServerConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.engine_config()?;
        Ok(config)
    }

    /// Reads the file; a relative `log` path is taken relative to it.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        if let (Some(log), Some(dir)) = (&config.log, path.parent()) {
            if log.is_relative() {
                config.log = Some(dir.join(log));
            }
        }
        Ok(config)
    }

    /// Loads the file named by `GDM_CONFIG`, or the defaults when it is unset.
    pub fn from_env() -> Result<Self, ConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) => Self::load(Path::new(&p)),
            None => Ok(Self::default()),
        }
    }

    pub fn engine_config(&self) -> Result<EngineConfig, ConfigError> {
        let defaults = ThresholdValues::default();
        let thresholds = ThresholdValues {
            low: self.thresholds.low.unwrap_or(defaults.low),
            medium: self.thresholds.medium.unwrap_or(defaults.medium),
            high: self.thresholds.high.unwrap_or(defaults.high),
        };
        thresholds.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.max_rounds == 0 {
            return Err(ConfigError::Invalid("max_rounds must be positive".into()));
        }
        Ok(EngineConfig {
            thresholds,
            default_max_rounds: self.max_rounds,
            snapshot_every: (self.snapshot_every > 0).then_some(self.snapshot_every),
            durable: self.fsync,
        })
    }
}
