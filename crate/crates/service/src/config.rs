use std::path::{Path, PathBuf};

use cabs_core::grpo::{ObjectiveConfig, DEFAULT_ADVANTAGE_EPSILON};
use cabs_core::reward::RewardConfig;
use cabs_llm::ModelConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value {value:?} for {var}")]
    Env { var: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

/// Service settings. Loaded from a TOML file, then overridden by `CABS_*`
/// environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    pub cache_dir: Option<PathBuf>,
    /// Judge model; the `llm` matcher is only offered when this is set.
    pub judge: Option<ModelConfig>,
    pub reward: RewardConfig,
    pub objective: ObjectiveConfig,
    pub advantage_epsilon: f64,
    /// Wall-clock budget for one group request.
    pub request_timeout_secs: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            cache_dir: None,
            judge: None,
            reward: RewardConfig::default(),
            objective: ObjectiveConfig::default(),
            advantage_epsilon: DEFAULT_ADVANTAGE_EPSILON,
            request_timeout_secs: 300.0,
        }
    }
}

fn parse_env<T: std::str::FromStr>(var: &str, value: String) -> Result<T, ServiceConfigError> {
    value.trim().parse().map_err(|_| ServiceConfigError::Env {
        var: var.to_string(),
        value,
    })
}

impl ServiceConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ServiceConfigError> {
        toml::from_str(text).map_err(|e| ServiceConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// File (when given) plus process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ServiceConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text, p)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies overrides from `lookup`:
    ///
    /// | variable | field |
    /// |---|---|
    /// | `CABS_BIND` | `bind` |
    /// | `CABS_CACHE_DIR` | `cache_dir` |
    /// | `CABS_ALPHA`, `CABS_GAMMA`, `CABS_EPSILON` | `reward.*` |
    /// | `CABS_CLIP_EPS`, `CABS_BETA` | `objective.*` |
    /// | `CABS_JUDGE_ENDPOINT`, `CABS_JUDGE_MODEL` | `judge.*` (creates it) |
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ServiceConfigError> {
        if let Some(v) = lookup("CABS_BIND") {
            self.bind = v;
        }
        if let Some(v) = lookup("CABS_CACHE_DIR") {
            self.cache_dir = Some(v.into());
        }
        for (var, slot) in [
            ("CABS_ALPHA", &mut self.reward.alpha),
            ("CABS_GAMMA", &mut self.reward.gamma),
            ("CABS_EPSILON", &mut self.reward.epsilon),
            ("CABS_CLIP_EPS", &mut self.objective.clip_epsilon),
            ("CABS_BETA", &mut self.objective.beta),
        ] {
            if let Some(v) = lookup(var) {
                *slot = parse_env(var, v)?;
            }
        }
        let endpoint = lookup("CABS_JUDGE_ENDPOINT");
        let model = lookup("CABS_JUDGE_MODEL");
        if endpoint.is_some() || model.is_some() {
            let judge = self.judge.get_or_insert_with(ModelConfig::default);
            if let Some(e) = endpoint {
                judge.endpoint = e;
            }
            if let Some(m) = model {
                judge.model = m;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ServiceConfigError::Invalid(e.to_string());
        self.reward.validate().map_err(|e| invalid(&e))?;
        self.objective.validate().map_err(|e| invalid(&e))?;
        if let Some(j) = &self.judge {
            j.validate().map_err(|e| invalid(&e))?;
        }
        if !(self.advantage_epsilon >= 0.0 && self.advantage_epsilon.is_finite()) {
            return Err(ServiceConfigError::Invalid(format!("advantage_epsilon={}", self.advantage_epsilon)));
        }
        if !(self.request_timeout_secs > 0.0 && self.request_timeout_secs.is_finite()) {
            return Err(ServiceConfigError::Invalid(format!(
                "request_timeout_secs={}",
                self.request_timeout_secs
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn file_then_env() {
        let text = r#"
bind = "0.0.0.0:9000"
[reward]
alpha = 0.5
[judge]
model = "m1"
"#;
        let mut cfg = ServiceConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.reward.alpha, 0.5);
        assert_eq!(cfg.reward.gamma, 1.0);
        let env: HashMap<&str, &str> = [("CABS_GAMMA", "2"), ("CABS_JUDGE_MODEL", "m2")].into();
        cfg.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(cfg.reward.gamma, 2.0);
        assert_eq!(cfg.judge.as_ref().unwrap().model, "m2");
        assert_eq!(cfg.bind, "0.0.0.0:9000");
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = ServiceConfig::default();
        assert!(matches!(
            cfg.apply_env(|k| (k == "CABS_ALPHA").then(|| "lots".to_string())),
            Err(ServiceConfigError::Env { .. })
        ));
        assert!(ServiceConfig::from_toml("nope = 1", Path::new("x.toml")).is_err());
        cfg.reward.alpha = 1.0;
        cfg.objective.clip_epsilon = 1.5;
        assert!(cfg.validate().is_err());
    }
}
