//! Per-unit hit rewards, the CABS reward and the trajectory-integral reward.
//!
//! The reference trajectory is the ground-truth unit order. For a trajectory
//! of `K` unit rewards `r_1..r_K`, `M` predicted units and `FP` false
//! positives:
//!
//! ```text
//! running_cost   = alpha - alpha/K * sum_k (1 - mean(r_1..r_k))^2     (0 when K = 0)
//! control_effort = gamma * (1 - (FP / (M + eps))^2)
//! terminal       = mean(r_1..r_K)                                     (0 when K = 0)
//! bonus          = 0.05 if M > 0 else 0
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{MatchResult, UnitJudgment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub exploration_bonus: f64,
    pub epsilon: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 1.0,
            gamma: 1.0,
            exploration_bonus: 0.05,
            epsilon: 1e-8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let finite = [self.alpha, self.gamma, self.exploration_bonus, self.epsilon]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.alpha < 0.0 || self.gamma < 0.0 || self.epsilon <= 0.0 {
            return Err(RewardError::InvalidConfig(format!(
                "alpha={} gamma={} exploration_bonus={} epsilon={}",
                self.alpha, self.gamma, self.exploration_bonus, self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardBreakdown {
    pub unit_rewards: Vec<f64>,
    pub r_cabs: f64,
    pub running_cost: f64,
    pub control_effort: f64,
    pub terminal: f64,
    pub bonus: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("invalid counts: fp={fp} exceeds m={m}")]
    InvalidCounts { fp: usize, m: usize },
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

/// `hit * (l*d + |l - d| / 2)` with `d := hit` and `l := location_match`.
pub fn unit_reward(j: &UnitJudgment) -> f64 {
    let hit = j.hit as u8 as f64;
    let d = hit;
    let l = j.location_match as u8 as f64;
    hit * (l * d + 0.5 * (l - d).abs())
}

pub fn cabs_reward(units: &[UnitJudgment]) -> f64 {
    mean(&units.iter().map(unit_reward).collect::<Vec<_>>())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Running cost over an ordered trajectory of unit rewards.
pub fn running_cost(rewards: &[f64], alpha: f64) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    let k = rewards.len() as f64;
    let mut prefix = 0.0;
    let mut squared = 0.0;
    for (i, r) in rewards.iter().enumerate() {
        prefix += r;
        let miss = 1.0 - prefix / (i + 1) as f64;
        squared += miss * miss;
    }
    alpha * (1.0 - squared / k)
}

pub fn tif_reward(units: &[UnitJudgment], fp: usize, m: usize, cfg: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    if fp > m {
        return Err(RewardError::InvalidCounts { fp, m });
    }
    cfg.validate()?;
    let unit_rewards: Vec<f64> = units.iter().map(unit_reward).collect();
    Ok(tif_from_rewards(unit_rewards, fp, m, cfg))
}

/// Same as [`tif_reward`] for a precomputed unit-reward trajectory.
pub fn tif_from_rewards(unit_rewards: Vec<f64>, fp: usize, m: usize, cfg: &RewardConfig) -> RewardBreakdown {
    let r_cabs = mean(&unit_rewards);
    let running_cost = running_cost(&unit_rewards, cfg.alpha);
    let ratio = fp as f64 / (m as f64 + cfg.epsilon);
    let control_effort = cfg.gamma * (1.0 - ratio * ratio);
    let terminal = r_cabs;
    let bonus = if m > 0 { cfg.exploration_bonus } else { 0.0 };
    RewardBreakdown {
        total: running_cost + control_effort + terminal + bonus,
        unit_rewards,
        r_cabs,
        running_cost,
        control_effort,
        terminal,
        bonus,
    }
}

pub fn tif_reward_for_match(m: &MatchResult, cfg: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    tif_reward(&m.judgments, m.fp(), m.pred_count, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(hit: bool, loc: bool) -> UnitJudgment {
        UnitJudgment {
            name: "u".into(),
            hit,
            location_match: loc,
            attribute_match: false,
        }
    }

    #[test]
    fn unit_rewards() {
        assert_eq!(unit_reward(&j(true, true)), 1.0);
        assert_eq!(unit_reward(&j(true, false)), 0.5);
        assert_eq!(unit_reward(&j(false, false)), 0.0);
    }

    #[test]
    fn cabs_means() {
        assert_eq!(cabs_reward(&[j(true, true), j(true, false)]), 0.75);
        assert_eq!(cabs_reward(&[]), 0.0);
        assert_eq!(cabs_reward(&vec![j(true, true); 5]), 1.0);
    }

    #[test]
    fn worked_example_terms() {
        let b = tif_reward(&[j(true, true), j(true, false)], 1, 3, &RewardConfig::default()).unwrap();
        assert_eq!(b.running_cost, 0.96875);
        assert!((b.control_effort - 8.0 / 9.0).abs() < 1e-8);
        assert_eq!(b.terminal, 0.75);
        assert_eq!(b.bonus, 0.05);
        assert_eq!(b.total, b.running_cost + b.control_effort + b.terminal + b.bonus);
        assert!((b.total - 2.657639).abs() < 1e-6);
    }

    #[test]
    fn boundaries() {
        let cfg = RewardConfig {
            gamma: 0.7,
            ..Default::default()
        };
        let silent_normal = tif_reward(&[], 0, 0, &cfg).unwrap();
        assert_eq!(silent_normal.total, 0.7);
        let silent_abnormal = tif_reward(&[j(false, false), j(false, false)], 0, 0, &cfg).unwrap();
        assert_eq!(silent_abnormal.total, 0.7);
        assert_eq!(silent_abnormal.running_cost, 0.0);
    }

    #[test]
    fn invalid_counts() {
        assert!(matches!(
            tif_reward(&[], 2, 1, &RewardConfig::default()),
            Err(RewardError::InvalidCounts { fp: 2, m: 1 })
        ));
        let bad = RewardConfig {
            alpha: -1.0,
            ..Default::default()
        };
        assert!(tif_reward(&[], 0, 0, &bad).is_err());
    }
}
