use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_API_KEY_ENV: &str = "CABS_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid model config: {0}")]
pub struct ConfigError(pub String);

/// Endpoint and request policy for one judge or extraction model. The API
/// key itself is never stored here, only the name of the variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: f64,
    /// Upper bound on in-flight requests through one client.
    pub max_concurrency: usize,
    /// First retry delay; doubles per attempt.
    pub backoff_base_ms: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "judge".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60.0,
            max_retries: 3,
            temperature: 0.0,
            max_concurrency: 8,
            backoff_base_ms: 500,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ConfigError(format!("timeout_secs must be > 0, got {}", self.timeout_secs)));
        }
        if self.temperature != 0.0 {
            return Err(ConfigError(format!(
                "judge calls run at temperature 0, got {}",
                self.temperature
            )));
        }
        if self.max_concurrency == 0 {
            return Err(ConfigError("max_concurrency must be at least 1".into()));
        }
        if self.model.trim().is_empty() || self.endpoint.trim().is_empty() {
            return Err(ConfigError("endpoint and model must be set".into()));
        }
        Ok(())
    }

    /// Reads the key from the configured environment variable, if set.
    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        ModelConfig::default().validate().unwrap();
        for bad in [
            ModelConfig {
                timeout_secs: 0.0,
                ..Default::default()
            },
            ModelConfig {
                temperature: 0.7,
                ..Default::default()
            },
            ModelConfig {
                max_concurrency: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
