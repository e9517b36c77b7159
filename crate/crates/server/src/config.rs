use std::path::{Path, PathBuf};

use flipfeed_core::harness::HarnessConfig;
use serde::{Deserialize, Serialize};

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_store() -> PathBuf {
    PathBuf::from("flipfeed.journal")
}

fn default_export_dir() -> PathBuf {
    PathBuf::from("exports")
}

/// Settings file. Secrets never live here; see the auth and endpoint docs for
/// the environment variables they come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_store")]
    pub store_path: PathBuf,
    /// Default pack file for `ingest`.
    #[serde(default)]
    pub pack_path: Option<PathBuf>,
    #[serde(default)]
    pub endpoints_path: Option<PathBuf>,
    #[serde(default = "default_export_dir")]
    pub export_dir: PathBuf,
    #[serde(default)]
    pub harness: HarnessConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let d = ServerConfig::default();
        assert_eq!(d.bind, "127.0.0.1:8080");
        assert_eq!(d.harness.wall_ms, 5000);
        let c: ServerConfig = toml::from_str("bind = \"0.0.0.0:9\"\n[harness]\nwall_ms = 200\n").unwrap();
        assert_eq!((c.bind.as_str(), c.harness.wall_ms), ("0.0.0.0:9", 200));
        assert!(toml::from_str::<ServerConfig>("api_key = \"x\"").is_err());
    }
}
