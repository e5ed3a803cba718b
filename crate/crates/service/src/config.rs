//! Service configuration: a TOML file plus `TRAPLINE_*` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use trapline_core::domain::CameraSource;

use crate::alerts::{validate_rules, AlertRule};
use crate::inference::BackendConfig;
use crate::ingest::{ImapConfig, DEFAULT_QUEUE_CAPACITY};

pub const ENV_PREFIX: &str = "TRAPLINE_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {key}: {message}")]
    Env { key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Drop directory laid out as `<root>/<camera_id>/*.jpg`.
    pub drop_dir: Option<PathBuf>,
    pub poll_interval_s: u64,
    pub queue_capacity: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            drop_dir: None,
            poll_interval_s: 60,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub path: PathBuf,
}

impl Default for StoreSection {
    fn default() -> Self {
        Self {
            path: PathBuf::from("trapline.db"),
        }
    }
}

/// In-process stand-in for the detection server.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSection {
    pub fixtures: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub ingest: IngestSection,
    pub mailbox: Option<ImapConfig>,
    pub backend: BackendConfig,
    pub mock: Option<MockSection>,
    pub store: StoreSection,
    pub alerts: Vec<AlertRule>,
    pub cameras: Vec<CameraSource>,
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths in the file are relative to the file.
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = self.ingest.drop_dir.as_mut() {
            fix(d);
        }
        if let Some(m) = self.mock.as_mut() {
            fix(&mut m.fixtures);
        }
        fix(&mut self.store.path);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Applies `TRAPLINE_<SECTION>_<KEY>` overrides from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parsed<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.trim().parse().map_err(|e: T::Err| ConfigError::Env {
                key: key.to_string(),
                message: e.to_string(),
            })
        }
        let get = |suffix: &str| {
            let key = format!("{ENV_PREFIX}{suffix}");
            lookup(&key).map(|v| (key, v))
        };

        if let Some((_, v)) = get("INGEST_DROP_DIR") {
            self.ingest.drop_dir = Some(PathBuf::from(v));
        }
        if let Some((k, v)) = get("INGEST_POLL_INTERVAL_S") {
            self.ingest.poll_interval_s = parsed(&k, &v)?;
        }
        if let Some((k, v)) = get("INGEST_QUEUE_CAPACITY") {
            self.ingest.queue_capacity = parsed(&k, &v)?;
        }
        if let Some((_, v)) = get("BACKEND_ENDPOINT") {
            self.backend.endpoint = v;
        }
        if let Some((_, v)) = get("BACKEND_MODEL") {
            self.backend.model = v;
        }
        if let Some((k, v)) = get("BACKEND_TIMEOUT_S") {
            self.backend.timeout_s = parsed(&k, &v)?;
        }
        if let Some((k, v)) = get("BACKEND_MAX_RETRIES") {
            self.backend.max_retries = parsed(&k, &v)?;
        }
        if let Some((k, v)) = get("BACKEND_CONFIDENCE_FLOOR") {
            self.backend.confidence_floor = parsed(&k, &v)?;
        }
        if let Some((k, v)) = get("BACKEND_WORKERS") {
            self.backend.workers = parsed(&k, &v)?;
        }
        if let Some((_, v)) = get("MOCK_FIXTURES") {
            self.mock = Some(MockSection { fixtures: v.into() });
        }
        if let Some((_, v)) = get("STORE_PATH") {
            self.store.path = v.into();
        }
        let mailbox_keys = ["MAILBOX_HOST", "MAILBOX_PORT", "MAILBOX_USERNAME", "MAILBOX_PASSWORD", "MAILBOX_FOLDER"];
        if mailbox_keys.iter().any(|k| get(k).is_some()) {
            let mut m = self.mailbox.clone().unwrap_or(ImapConfig {
                host: String::new(),
                port: 993,
                username: String::new(),
                password: String::new(),
                folder: "INBOX".into(),
            });
            if let Some((_, v)) = get("MAILBOX_HOST") {
                m.host = v;
            }
            if let Some((k, v)) = get("MAILBOX_PORT") {
                m.port = parsed(&k, &v)?;
            }
            if let Some((_, v)) = get("MAILBOX_USERNAME") {
                m.username = v;
            }
            if let Some((_, v)) = get("MAILBOX_PASSWORD") {
                m.password = v;
            }
            if let Some((_, v)) = get("MAILBOX_FOLDER") {
                m.folder = v;
            }
            self.mailbox = Some(m);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.backend.validate().map_err(ConfigError::Invalid)?;
        validate_rules(&self.alerts).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.ingest.queue_capacity == 0 {
            return Err(ConfigError::Invalid("ingest.queue_capacity must be at least 1".into()));
        }
        if self.ingest.poll_interval_s == 0 {
            return Err(ConfigError::Invalid("ingest.poll_interval_s must be at least 1".into()));
        }
        if let Some(m) = &self.mailbox {
            if m.host.trim().is_empty() {
                return Err(ConfigError::Invalid("mailbox.host is empty".into()));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for c in &self.cameras {
            if c.resolution.0 == 0 || c.resolution.1 == 0 {
                return Err(ConfigError::Invalid(format!("camera {} has an empty resolution", c.camera_id)));
            }
            if !ids.insert(&c.camera_id) {
                return Err(ConfigError::Invalid(format!("camera {} is listed twice", c.camera_id)));
            }
        }
        Ok(())
    }
}
