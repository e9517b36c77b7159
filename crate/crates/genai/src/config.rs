use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Base,
    Finetuned,
}

fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

/// One chat-completion endpoint. `api_key_env` names the environment variable
/// holding the key; the key itself never appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub name: String,
    pub base_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub model_id: String,
    pub kind: EndpointKind,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles per attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl EndpointConfig {
    pub fn new(name: &str, base_url: &str, model_id: &str, kind: EndpointKind) -> Self {
        EndpointConfig {
            name: name.to_string(),
            base_url: base_url.to_string(),
            api_key_env: None,
            model_id: model_id.to_string(),
            kind,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |message: &str| ConfigError::Invalid { endpoint: self.name.clone(), message: message.to_string() };
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) {
            return Err(bad("name must be non-empty and use only letters, digits, '-', '_' or '.'"));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(bad("base_url must start with http:// or https://"));
        }
        if self.model_id.trim().is_empty() {
            return Err(bad("model_id is empty"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(bad("temperature must be a finite number >= 0"));
        }
        if self.timeout_ms == 0 {
            return Err(bad("timeout_ms must be positive"));
        }
        Ok(())
    }

    /// Reads the key from the environment, if one is configured.
    pub fn api_key(&self) -> Result<Option<String>, ConfigError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ConfigError::MissingKey { endpoint: self.name.clone(), var: var.clone() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointsFile {
    #[serde(default)]
    pub endpoints: Vec<EndpointConfig>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read endpoint config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("endpoint config: {0}")]
    Parse(String),
    #[error("endpoint {endpoint}: {message}")]
    Invalid { endpoint: String, message: String },
    #[error("duplicate endpoint name {0}")]
    Duplicate(String),
    #[error("endpoint {endpoint}: environment variable {var} is not set")]
    MissingKey { endpoint: String, var: String },
}

impl EndpointsFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let file: EndpointsFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut names = HashSet::new();
        for e in &file.endpoints {
            e.validate()?;
            if !names.insert(e.name.as_str()) {
                return Err(ConfigError::Duplicate(e.name.clone()));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }
}
