//! Service configuration: an optional TOML file plus environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const ENV_DATA_DIR: &str = "PINVIEW_DATA_DIR";
pub const ENV_PORT: &str = "PINVIEW_PORT";
pub const ENV_SEED: &str = "PINVIEW_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub host: String,
    pub port: u16,
    /// Seeds the generator for session seeds the client leaves unset.
    /// Entropy is used when absent.
    pub seed: Option<u64>,
    /// Idle time after which a session stops accepting requests.
    pub session_ttl_secs: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: PathBuf::from("data"),
            host: "127.0.0.1".into(),
            port: 8080,
            seed: None,
            session_ttl_secs: 24 * 3600,
        }
    }
}

impl ServiceConfig {
    /// Reads `path` when given, then applies the environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Io(p.to_path_buf(), e))?;
                toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?
            }
            None => ServiceConfig::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(dir) = var(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(dir);
        }
        if let Some(port) = var(ENV_PORT) {
            self.port = port
                .parse()
                .map_err(|_| ServiceError::Config(format!("{ENV_PORT}=`{port}` is not a port number")))?;
        }
        if let Some(seed) = var(ENV_SEED) {
            self.seed = Some(
                seed.parse()
                    .map_err(|_| ServiceError::Config(format!("{ENV_SEED}=`{seed}` is not an unsigned integer")))?,
            );
        }
        Ok(())
    }
}
