//! Application settings: defaults, then the config file, then environment.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use picsearch_core::query::{DEFAULT_K, DEFAULT_THRESHOLD};

use crate::kv::{KvError, KvFile};

pub const ENV_PREFIX: &str = "PICSEARCH_";
pub const CONFIG_ENV: &str = "PICSEARCH_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: String, source: KvError },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub catalog_root: PathBuf,
    pub model_registry_dir: PathBuf,
    pub index_cache_dir: PathBuf,
    pub default_model: String,
    pub default_detector: String,
    pub default_threshold: f32,
    pub default_k: usize,
    pub bind_address: SocketAddr,
    /// Built web UI assets; a placeholder page is served when absent.
    pub ui_dir: Option<PathBuf>,
}

const KEYS: [&str; 9] = [
    "catalog_root",
    "model_dir",
    "index_dir",
    "default_model",
    "default_detector",
    "default_threshold",
    "default_k",
    "bind_address",
    "ui_dir",
];

impl Default for AppConfig {
    fn default() -> Self {
        let home = dirs::home_dir().unwrap_or_else(|| PathBuf::from("."));
        let data = dirs::data_dir().unwrap_or_else(|| home.join(".local/share"));
        let cache = dirs::cache_dir().unwrap_or_else(|| home.join(".cache"));
        Self {
            catalog_root: dirs::picture_dir().unwrap_or_else(|| home.join("Pictures")),
            model_registry_dir: data.join("picsearch").join("models"),
            index_cache_dir: cache.join("picsearch"),
            default_model: "resnet50".into(),
            default_detector: "owlvit-base".into(),
            default_threshold: DEFAULT_THRESHOLD,
            default_k: DEFAULT_K,
            bind_address: SocketAddr::from(([127, 0, 0, 1], 7878)),
            ui_dir: None,
        }
    }
}

/// The config file used when none is given: `$PICSEARCH_CONFIG`, else the
/// platform config directory.
pub fn default_config_path(env: &dyn Fn(&str) -> Option<String>) -> Option<PathBuf> {
    env(CONFIG_ENV)
        .map(PathBuf::from)
        .or_else(|| dirs::config_dir().map(|d| d.join("picsearch").join("config")))
}

impl AppConfig {
    /// Defaults overridden by `file` (when it exists) and then by
    /// `PICSEARCH_<KEY>` environment variables.
    pub fn load(file: Option<&Path>, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        if let Some(path) = file.filter(|p| p.exists()) {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
            let kv = KvFile::parse(&text)
                .map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })?;
            if let Some(k) = kv.keys().find(|k| !KEYS.contains(k)) {
                return Err(ConfigError::UnknownKey(k.into()));
            }
            let base = path.parent().unwrap_or(Path::new("."));
            for key in KEYS {
                if let Some(v) = kv.get(key) {
                    config.set(key, v, Some(base))?;
                }
            }
        }
        for key in KEYS {
            if let Some(v) = env(&format!("{ENV_PREFIX}{}", key.to_uppercase())) {
                config.set(key, &v, None)?;
            }
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        let path = || base.map_or_else(|| PathBuf::from(value), |b| b.join(value));
        let invalid = || ConfigError::Invalid(format!("bad value for `{key}`: {value:?}"));
        match key {
            "catalog_root" => self.catalog_root = path(),
            "model_dir" => self.model_registry_dir = path(),
            "index_dir" => self.index_cache_dir = path(),
            "default_model" => self.default_model = value.into(),
            "default_detector" => self.default_detector = value.into(),
            "default_threshold" => self.default_threshold = value.parse().map_err(|_| invalid())?,
            "default_k" => self.default_k = value.parse().map_err(|_| invalid())?,
            "bind_address" => self.bind_address = value.parse().map_err(|_| invalid())?,
            "ui_dir" => self.ui_dir = Some(path()),
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.default_k == 0 {
            return Err(ConfigError::Invalid("default_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.default_threshold) {
            return Err(ConfigError::Invalid("default_threshold must be within [0, 1]".into()));
        }
        Ok(())
    }
}
