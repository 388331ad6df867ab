//! Group-relative advantages, the clipped surrogate and the KL estimate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ADVANTAGE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("group of {0} rollouts is too small; need at least 2")]
    GroupTooSmall(usize),
    #[error("importance ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("log-prob sequences differ in length ({0} vs {1}) or are empty")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("invalid objective config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub rewards: Vec<f64>,
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub advantages: Vec<f64>,
    pub epsilon: f64,
}

/// `(r_i - mean) / (population_std + epsilon)` over the group.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<GroupScores, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) || !epsilon.is_finite() || epsilon < 0.0 {
        return Err(GrpoError::NonFinite);
    }
    let n = rewards.len() as f64;
    let mu = rewards.iter().sum::<f64>() / n;
    let centered: Vec<f64> = rewards.iter().map(|r| r - mu).collect();
    let sigma = (centered.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let constant = rewards.iter().all(|r| *r == rewards[0]);
    let advantages = if constant || sigma == 0.0 {
        vec![0.0; rewards.len()]
    } else {
        centered.iter().map(|d| d / (sigma + epsilon)).collect()
    };
    Ok(GroupScores {
        rewards: rewards.to_vec(),
        mu,
        sigma,
        advantages,
        epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub clip_epsilon: f64,
    pub beta: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            clip_epsilon: 0.2,
            beta: 0.04,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(GrpoError::InvalidConfig(format!(
                "clip_epsilon={} beta={}",
                self.clip_epsilon, self.beta
            )));
        }
        Ok(())
    }
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn surrogate_term(ratio: f64, advantage: f64, cfg: &ObjectiveConfig) -> Result<f64, GrpoError> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(GrpoError::NonPositiveRatio(ratio));
    }
    cfg.validate()?;
    let clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// Mean over tokens of `exp(d) - d - 1` with `d = logp_ref - logp_policy`.
/// Nonnegative for every input.
pub fn kl_estimate(logp_policy: &[f64], logp_ref: &[f64]) -> Result<f64, GrpoError> {
    if logp_policy.len() != logp_ref.len() || logp_policy.is_empty() {
        return Err(GrpoError::LengthMismatch(logp_policy.len(), logp_ref.len()));
    }
    let total: f64 = logp_policy
        .iter()
        .zip(logp_ref)
        .map(|(p, r)| {
            let d = r - p;
            (d.exp_m1() - d).max(0.0)
        })
        .sum();
    Ok(total / logp_policy.len() as f64)
}

/// Per-group objective contribution: mean clipped surrogate minus the
/// beta-weighted KL estimate.
pub fn group_objective(ratios: &[f64], advantages: &[f64], kl: f64, cfg: &ObjectiveConfig) -> Result<f64, GrpoError> {
    if ratios.len() != advantages.len() || ratios.is_empty() {
        return Err(GrpoError::LengthMismatch(ratios.len(), advantages.len()));
    }
    let mut sum = 0.0;
    for (r, a) in ratios.iter().zip(advantages) {
        sum += surrogate_term(*r, *a, cfg)?;
    }
    Ok(sum / ratios.len() as f64 - cfg.beta * kl)
}
