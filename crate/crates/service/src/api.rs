//! Wire types and the group scoring pipeline behind `POST /v1/reward/group`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use cabs_core::error::{from_json_str, SchemaError};
use cabs_core::grpo::{group_advantages, ObjectiveConfig};
use cabs_core::matching::{match_reports, MatchError, MatchResult, MatcherRegistry, Prediction};
use cabs_core::reward::{tif_reward_for_match, RewardBreakdown, RewardConfig};
use cabs_core::units::{AbnormalityUnit, ReportDecomposition};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;

/// One rollout: report text, a full decomposition, or a bare unit list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rollout {
    Text(String),
    Units(ReportDecomposition),
    UnitList(Vec<AbnormalityUnit>),
}

impl Rollout {
    pub fn into_prediction(self) -> Prediction {
        match self {
            Rollout::Text(t) => Prediction::Text(t),
            Rollout::Units(d) => Prediction::Units(d),
            Rollout::UnitList(units) => Prediction::Units(ReportDecomposition::new(units)),
        }
    }
}

/// Per-request overrides of the service reward defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardOverrides {
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub exploration_bonus: Option<f64>,
    pub epsilon: Option<f64>,
    pub advantage_epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRequest {
    #[serde(default)]
    pub request_id: Option<String>,
    pub gt_units: ReportDecomposition,
    pub rollouts: Vec<Rollout>,
    #[serde(default)]
    pub config: RewardOverrides,
    #[serde(default = "default_matcher")]
    pub matcher: String,
    /// Adds wall-clock timings, which makes responses differ run to run.
    #[serde(default)]
    pub include_timing: bool,
}

fn default_matcher() -> String {
    "lexical".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub gt_count: usize,
    pub pred_count: usize,
    pub hits: usize,
    pub false_positives: usize,
    pub location_matches: usize,
    pub attribute_matches: usize,
}

impl From<&MatchResult> for MatchSummary {
    fn from(m: &MatchResult) -> Self {
        MatchSummary {
            gt_count: m.gt_count(),
            pred_count: m.pred_count,
            hits: m.hits(),
            false_positives: m.fp(),
            location_matches: m.judgments.iter().filter(|j| j.location_match).count(),
            attribute_matches: m.judgments.iter().filter(|j| j.attribute_match).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResponse {
    pub request_id: Option<String>,
    pub matcher: String,
    pub rewards: Vec<f64>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub matches: Vec<MatchSummary>,
    pub reward_config: RewardConfig,
    pub advantage_epsilon: f64,
    pub objective: ObjectiveConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    MalformedJson,
    SchemaViolation,
    UnknownMatcher,
    InvalidConfig,
    GroupTooSmall,
    BackendFailure,
    Timeout,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::MalformedJson => "malformed_json",
            ErrorCode::SchemaViolation => "schema_violation",
            ErrorCode::UnknownMatcher => "unknown_matcher",
            ErrorCode::InvalidConfig => "invalid_config",
            ErrorCode::GroupTooSmall => "group_too_small",
            ErrorCode::BackendFailure => "backend_failure",
            ErrorCode::Timeout => "timeout",
        }
    }

    pub fn status(self) -> u16 {
        match self {
            ErrorCode::MalformedJson | ErrorCode::SchemaViolation | ErrorCode::UnknownMatcher | ErrorCode::InvalidConfig => 400,
            ErrorCode::GroupTooSmall => 422,
            ErrorCode::BackendFailure => 502,
            ErrorCode::Timeout => 504,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub path: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}: {message}", code.as_str())]
pub struct ApiError {
    pub code: ErrorCode,
    pub path: Option<String>,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, path: Option<&str>, message: impl Into<String>) -> Self {
        ApiError {
            code,
            path: path.map(str::to_string),
            message: message.into(),
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code.as_str().into(),
            path: self.path.clone(),
            message: self.message.clone(),
        }
    }
}

impl From<SchemaError> for ApiError {
    fn from(e: SchemaError) -> Self {
        let code = match e {
            SchemaError::MalformedJson { .. } => ErrorCode::MalformedJson,
            _ => ErrorCode::SchemaViolation,
        };
        let message = match &e {
            SchemaError::MalformedJson { message, .. } => message.clone(),
            SchemaError::SchemaViolation { rule, .. } => rule.clone(),
            SchemaError::EmptyLabel => e.to_string(),
        };
        ApiError::new(code, Some(e.path()), message)
    }
}

/// Parses and validates a request body. Every rejection carries the path of
/// the offending element.
pub fn parse_group_request(body: &[u8]) -> Result<GroupRequest, ApiError> {
    let text = std::str::from_utf8(body).map_err(|e| ApiError::new(ErrorCode::MalformedJson, Some("."), e.to_string()))?;
    let req: GroupRequest = from_json_str(text)?;
    req.gt_units.validate_at("gt_units")?;
    for (i, r) in req.rollouts.iter().enumerate() {
        if let Rollout::Units(d) = r {
            d.validate_at(&format!("rollouts[{i}]"))?;
        }
    }
    Ok(req)
}

/// Shared scoring state: matcher backends plus service defaults.
#[derive(Clone)]
pub struct GroupScorer {
    matchers: MatcherRegistry,
    defaults: Arc<ServiceConfig>,
}

impl GroupScorer {
    pub fn new(matchers: MatcherRegistry, defaults: ServiceConfig) -> Self {
        GroupScorer {
            matchers,
            defaults: Arc::new(defaults),
        }
    }

    pub fn matcher_names(&self) -> Vec<String> {
        self.matchers.names()
    }

    pub fn defaults(&self) -> &ServiceConfig {
        &self.defaults
    }

    fn effective(&self, o: &RewardOverrides) -> Result<(RewardConfig, f64), ApiError> {
        let d = &self.defaults.reward;
        let cfg = RewardConfig {
            alpha: o.alpha.unwrap_or(d.alpha),
            gamma: o.gamma.unwrap_or(d.gamma),
            exploration_bonus: o.exploration_bonus.unwrap_or(d.exploration_bonus),
            epsilon: o.epsilon.unwrap_or(d.epsilon),
        };
        cfg.validate()
            .map_err(|e| ApiError::new(ErrorCode::InvalidConfig, Some("config"), e.to_string()))?;
        let adv_eps = o.advantage_epsilon.unwrap_or(self.defaults.advantage_epsilon);
        if !(adv_eps >= 0.0 && adv_eps.is_finite()) {
            return Err(ApiError::new(
                ErrorCode::InvalidConfig,
                Some("config.advantage_epsilon"),
                format!("must be finite and >= 0, got {adv_eps}"),
            ));
        }
        Ok((cfg, adv_eps))
    }

    /// Matches every rollout against the ground truth, computes TIF rewards
    /// and normalizes them into group advantages. Output order follows
    /// rollout order.
    pub async fn score(&self, req: GroupRequest) -> Result<GroupResponse, ApiError> {
        let started = Instant::now();
        let budget = Duration::from_secs_f64(self.defaults.request_timeout_secs);
        let include_timing = req.include_timing;
        let mut resp = tokio::time::timeout(budget, self.score_inner(req))
            .await
            .map_err(|_| ApiError::new(ErrorCode::Timeout, None, format!("group not scored within {budget:?}")))??;
        if include_timing {
            resp.timing = Some(Timing {
                total_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
        Ok(resp)
    }

    async fn score_inner(&self, req: GroupRequest) -> Result<GroupResponse, ApiError> {
        let g = req.rollouts.len();
        if g < 2 {
            return Err(ApiError::new(
                ErrorCode::GroupTooSmall,
                Some("rollouts"),
                format!("group has {g} rollouts; at least 2 are required"),
            ));
        }
        let matcher = self
            .matchers
            .get(&req.matcher)
            .map_err(|e| ApiError::new(ErrorCode::UnknownMatcher, Some("matcher"), e.to_string()))?;
        let (reward_cfg, adv_eps) = self.effective(&req.config)?;

        let gt = &req.gt_units;
        let predictions: Vec<Prediction> = req.rollouts.into_iter().map(Rollout::into_prediction).collect();
        let outcomes = futures::future::join_all(predictions.iter().map(|p| match_reports(gt, p, matcher.as_ref()))).await;

        let mut matches = Vec::with_capacity(g);
        let mut breakdowns = Vec::with_capacity(g);
        for (i, outcome) in outcomes.into_iter().enumerate() {
            let m = outcome.map_err(|e| match_error(i, e))?;
            let b = tif_reward_for_match(&m, &reward_cfg)
                .map_err(|e| ApiError::new(ErrorCode::BackendFailure, Some(&format!("rollouts[{i}]")), e.to_string()))?;
            matches.push(MatchSummary::from(&m));
            breakdowns.push(b);
        }
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let group = group_advantages(&rewards, adv_eps)
            .map_err(|e| ApiError::new(ErrorCode::InvalidConfig, Some("rollouts"), e.to_string()))?;

        Ok(GroupResponse {
            request_id: req.request_id,
            matcher: matcher.name().to_string(),
            rewards,
            breakdowns,
            advantages: group.advantages,
            mu: group.mu,
            sigma: group.sigma,
            matches,
            reward_config: reward_cfg,
            advantage_epsilon: adv_eps,
            objective: self.defaults.objective,
            timing: None,
        })
    }
}

fn match_error(i: usize, e: MatchError) -> ApiError {
    let path = format!("rollouts[{i}]");
    ApiError::new(ErrorCode::BackendFailure, Some(&path), e.to_string())
}
