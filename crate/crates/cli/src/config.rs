//! Runtime settings.
//!
//! Each key is resolved from, in order of precedence: a command-line flag,
//! its `GRANTTREND_*` environment variable, the TOML config file, and the
//! built-in default.
//!
//! | key          | flag           | environment             | default      |
//! |--------------|----------------|-------------------------|--------------|
//! | `data_dir`   | `--data-dir`   | `GRANTTREND_DATA_DIR`   | `./data`     |
//! | `rate_table` | `--rates`      | `GRANTTREND_RATE_TABLE` | USD only     |
//! | `trend_k`    | `--trend-k`    | `GRANTTREND_TREND_K`    | `3`          |
//! | `port`       | `--port`       | `GRANTTREND_PORT`       | `8080`       |
//! | `bind`       | `--bind`       | `GRANTTREND_BIND`       | `127.0.0.1`  |
//! | `api_token`  | `--token`      | `GRANTTREND_API_TOKEN`  | none         |
//!
//! The config file itself is chosen with `--config` or `GRANTTREND_CONFIG`.
//! Relative paths inside it are resolved against the file's directory.

use std::net::IpAddr;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use granttrend_core::stats::DEFAULT_TREND_RUN;
use serde::Deserialize;

use crate::commands::CliError;

pub const DEFAULT_PORT: u16 = 8080;

/// Keys accepted in the config file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data_dir: Option<PathBuf>,
    pub rate_table: Option<PathBuf>,
    pub port: Option<u16>,
    pub bind: Option<IpAddr>,
    pub api_token: Option<String>,
    pub trend_k: Option<NonZeroUsize>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::env(format!("reading {}: {e}", path.display())))?;
        let mut config: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::input(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data_dir, &mut config.rate_table].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

/// Values taken from flags or the environment; `None` falls through to the
/// config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub rate_table: Option<PathBuf>,
    pub port: Option<u16>,
    pub bind: Option<IpAddr>,
    pub api_token: Option<String>,
    pub trend_k: Option<NonZeroUsize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub rate_table: Option<PathBuf>,
    pub port: u16,
    pub bind: IpAddr,
    pub api_token: Option<String>,
    pub trend_k: NonZeroUsize,
}

impl Settings {
    pub fn resolve(overrides: Overrides) -> Result<Settings, CliError> {
        let file = match &overrides.config {
            Some(path) => FileConfig::read(path)?,
            None => FileConfig::default(),
        };
        Ok(Settings::merge(overrides, file))
    }

    pub fn merge(o: Overrides, file: FileConfig) -> Settings {
        Settings {
            data_dir: o.data_dir.or(file.data_dir).unwrap_or_else(|| PathBuf::from("data")),
            rate_table: o.rate_table.or(file.rate_table),
            port: o.port.or(file.port).unwrap_or(DEFAULT_PORT),
            bind: o.bind.or(file.bind).unwrap_or(IpAddr::from([127, 0, 0, 1])),
            api_token: o.api_token.or(file.api_token).filter(|t| !t.is_empty()),
            trend_k: o.trend_k.or(file.trend_k).unwrap_or(DEFAULT_TREND_RUN),
        }
    }

    /// Settings rooted at `data_dir` with every other key at its default.
    pub fn with_data_dir(data_dir: impl Into<PathBuf>) -> Settings {
        Settings::merge(
            Overrides {
                data_dir: Some(data_dir.into()),
                ..Overrides::default()
            },
            FileConfig::default(),
        )
    }
}
