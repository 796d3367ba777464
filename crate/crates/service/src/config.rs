//! Service configuration file (TOML).
//!
//! ```toml
//! [server]
//! host = "0.0.0.0"
//! port = 8080
//!
//! [detector]
//! backend = "external"
//! endpoint = "http://127.0.0.1:9000"
//!
//! [alerting]
//! n = 5
//! k = 3
//! m = 10
//! cooldown = 300
//! webhooks = [{ url = "http://ops.example/hook" }]
//!
//! [store]
//! dir = "/var/lib/smokewatch"
//!
//! [[camera]]
//! id = "ridge-north"
//! url = "http://cam.example/still.jpg"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerting::{AlarmParams, AlertKind};
use crate::detector::DetectorConfig;
use crate::ingest::CameraConfig;

pub const ENV_HOST: &str = "SMOKEWATCH_HOST";
pub const ENV_PORT: &str = "SMOKEWATCH_PORT";
pub const ENV_STORE_DIR: &str = "SMOKEWATCH_STORE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    /// When set, every API request must carry `Authorization: Bearer <token>`.
    pub auth_token: Option<String>,
    /// Frames waiting for the detector before the oldest is dropped.
    pub queue_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            auth_token: None,
            queue_capacity: 64,
        }
    }
}

fn default_kinds() -> Vec<AlertKind> {
    vec![AlertKind::Raised]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WebhookConfig {
    pub url: String,
    /// Event kinds to POST. Only `raised` by default.
    #[serde(default = "default_kinds")]
    pub kinds: Vec<AlertKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertingConfig {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    /// Seconds.
    pub cooldown: u64,
    pub webhooks: Vec<WebhookConfig>,
    /// Alert log file; defaults to `alerts.log` in the store directory.
    pub alert_log: Option<PathBuf>,
}

impl Default for AlertingConfig {
    fn default() -> Self {
        let p = AlarmParams::default();
        Self {
            n: p.n,
            k: p.k,
            m: p.m,
            cooldown: p.cooldown,
            webhooks: Vec::new(),
            alert_log: None,
        }
    }
}

impl AlertingConfig {
    pub fn params(&self) -> AlarmParams {
        AlarmParams {
            n: self.n,
            k: self.k,
            m: self.m,
            cooldown: self.cooldown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub dir: PathBuf,
    /// Write a snapshot after this many records (0 disables).
    pub snapshot_every: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("smokewatch-data"),
            snapshot_every: 1000,
        }
    }
}

impl StoreConfig {
    pub fn frame_dir(&self) -> PathBuf {
        self.dir.join("frames")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub detector: DetectorConfig,
    pub alerting: AlertingConfig,
    pub store: StoreConfig,
    #[serde(rename = "camera")]
    pub cameras: Vec<CameraConfig>,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, then applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| LoadError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.apply_env(|k| std::env::var(k).ok())
            .map_err(LoadError::Invalid)?;
        cfg.validate().map_err(LoadError::Invalid)?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), String> {
        if let Some(h) = get(ENV_HOST) {
            self.server.host = h;
        }
        if let Some(p) = get(ENV_PORT) {
            self.server.port = p
                .parse()
                .map_err(|_| format!("{ENV_PORT}={p:?} is not a port number"))?;
        }
        if let Some(d) = get(ENV_STORE_DIR) {
            self.store.dir = PathBuf::from(d);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.detector.validate().map_err(|e| format!("detector: {e}"))?;
        self.alerting
            .params()
            .validate()
            .map_err(|e| format!("alerting: {e}"))?;
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.cameras {
            c.validate().map_err(|e| format!("camera {:?}: {e}", c.id))?;
            if !seen.insert(&c.id) {
                return Err(format!("camera {:?} defined twice", c.id));
            }
        }
        for w in &self.alerting.webhooks {
            reqwest::Url::parse(&w.url).map_err(|e| format!("webhook {:?}: {e}", w.url))?;
        }
        Ok(())
    }

    pub fn alert_log_path(&self) -> PathBuf {
        self.alerting
            .alert_log
            .clone()
            .unwrap_or_else(|| self.store.dir.join("alerts.log"))
    }
}
