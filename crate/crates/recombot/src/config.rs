//! Deployment settings: a TOML file overridden by environment variables.
//!
//! | key               | env                       | default |
//! |-------------------|---------------------------|---------|
//! | `eta`             | `RECOMBOT_ETA`            | 0.1 |
//! | `blend_query`     | `RECOMBOT_BLEND_QUERY`    | 0.7 |
//! | `blend_session`   | `RECOMBOT_BLEND_SESSION`  | 0.3 |
//! | `radius_km`       | `RECOMBOT_RADIUS_KM`      | 10 |
//! | `k`               | `RECOMBOT_K`              | 5 |
//! | `cache_ttl_secs`  | `RECOMBOT_CACHE_TTL_SECS` | 120 |
//! | `fixture`         | `RECOMBOT_FIXTURE`        | unset (live API) |
//! | `ocm_api_key`     | `OCM_API_KEY`             | unset |
//! | `ocm_base_url`    | `RECOMBOT_OCM_BASE_URL`   | public endpoint |
//! | `extractor_url`   | `RECOMBOT_EXTRACTOR_URL`  | unset (rule-based only) |
//! | `listen`          | `RECOMBOT_LISTEN`         | `127.0.0.1:8080` |
//! | `store_path`      | `RECOMBOT_STORE`          | `recombot-sessions.jsonl` |

use std::path::{Path, PathBuf};
use std::str::FromStr;

use recombot_core::{LearningRate, DEFAULT_K};
use serde::Deserialize;

use crate::ocm::DEFAULT_BASE_URL;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("environment variable {var}: cannot parse `{value}`")]
    Env { var: &'static str, value: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub eta: f64,
    pub blend_query: f64,
    pub blend_session: f64,
    pub radius_km: f64,
    pub k: usize,
    pub cache_ttl_secs: u64,
    pub fixture: Option<String>,
    pub ocm_api_key: Option<String>,
    pub ocm_base_url: String,
    pub extractor_url: Option<String>,
    pub listen: String,
    pub store_path: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            eta: LearningRate::DEFAULT.get(),
            blend_query: 0.7,
            blend_session: 0.3,
            radius_km: 10.0,
            k: DEFAULT_K,
            cache_ttl_secs: 120,
            fixture: None,
            ocm_api_key: None,
            ocm_base_url: DEFAULT_BASE_URL.to_string(),
            extractor_url: None,
            listen: "127.0.0.1:8080".to_string(),
            store_path: PathBuf::from("recombot-sessions.jsonl"),
        }
    }
}

fn parse_var<T: FromStr>(var: &'static str, value: String) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError::Env { var, value })
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads `path` if given, then applies process environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Config::from_toml(&text)?
            }
            None => Config::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = env("RECOMBOT_ETA") {
            self.eta = parse_var("RECOMBOT_ETA", v)?;
        }
        if let Some(v) = env("RECOMBOT_BLEND_QUERY") {
            self.blend_query = parse_var("RECOMBOT_BLEND_QUERY", v)?;
        }
        if let Some(v) = env("RECOMBOT_BLEND_SESSION") {
            self.blend_session = parse_var("RECOMBOT_BLEND_SESSION", v)?;
        }
        if let Some(v) = env("RECOMBOT_RADIUS_KM") {
            self.radius_km = parse_var("RECOMBOT_RADIUS_KM", v)?;
        }
        if let Some(v) = env("RECOMBOT_K") {
            self.k = parse_var("RECOMBOT_K", v)?;
        }
        if let Some(v) = env("RECOMBOT_CACHE_TTL_SECS") {
            self.cache_ttl_secs = parse_var("RECOMBOT_CACHE_TTL_SECS", v)?;
        }
        if let Some(v) = env("RECOMBOT_FIXTURE") {
            self.fixture = Some(v);
        }
        if let Some(v) = env("OCM_API_KEY") {
            self.ocm_api_key = Some(v);
        }
        if let Some(v) = env("RECOMBOT_OCM_BASE_URL") {
            self.ocm_base_url = v;
        }
        if let Some(v) = env("RECOMBOT_EXTRACTOR_URL") {
            self.extractor_url = Some(v);
        }
        if let Some(v) = env("RECOMBOT_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = env("RECOMBOT_STORE") {
            self.store_path = PathBuf::from(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        LearningRate::new(self.eta).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let blend_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !blend_ok(self.blend_query)
            || !blend_ok(self.blend_session)
            || self.blend_query + self.blend_session <= 0.0
        {
            return Err(ConfigError::Invalid(
                "blend coefficients must be nonnegative and not both zero".into(),
            ));
        }
        if !self.radius_km.is_finite() || self.radius_km <= 0.0 {
            return Err(ConfigError::Invalid("radius_km must be positive".into()));
        }
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        Ok(())
    }
}
