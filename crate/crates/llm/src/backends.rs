//! Model-backed strategies for the core registries.

use std::collections::HashMap;
use std::sync::Arc;

use async_trait::async_trait;
use cabs_core::extract::{ExtractError, Extractor};
use cabs_core::matching::{MatchError, MatchResult, Matcher, Prediction};
use cabs_core::mcq::McqSet;
use cabs_core::units::{AbnormalityUnit, ReportDecomposition};

use crate::client::{LlmClient, LlmError};
use crate::parse::{parse_decomposition_reply, parse_match_reply, parse_mcq_reply};
use crate::prompt::{render_prompt, Template};

pub const LLM_BACKEND: &str = "llm";

fn backend(e: LlmError) -> String {
    e.to_string()
}

pub struct LlmExtractor {
    client: Arc<LlmClient>,
}

impl LlmExtractor {
    pub fn new(client: Arc<LlmClient>) -> Self {
        LlmExtractor { client }
    }
}

#[async_trait]
impl Extractor for LlmExtractor {
    fn name(&self) -> &str {
        LLM_BACKEND
    }

    async fn extract(&self, report: &str) -> Result<ReportDecomposition, ExtractError> {
        let bindings = HashMap::from([("report", report)]);
        let prompt = render_prompt(Template::Extract, &bindings).map_err(|e| ExtractError::ExtractionFailed(e.to_string()))?;
        self.client
            .complete_json(&prompt, parse_decomposition_reply)
            .await
            .map_err(|e| match e {
                LlmError::Parse(p) => ExtractError::ExtractionFailed(p.to_string()),
                other => ExtractError::Backend(backend(other)),
            })
    }
}

/// Judge matcher. Free-text predictions go to the judge verbatim; unit
/// predictions are sent as their JSON list.
pub struct LlmMatcher {
    client: Arc<LlmClient>,
}

impl LlmMatcher {
    pub fn new(client: Arc<LlmClient>) -> Self {
        LlmMatcher { client }
    }

    pub fn prompt_for(gt: &ReportDecomposition, pred: &Prediction) -> String {
        let gt_json = gt.to_json();
        let pred_text = match pred {
            Prediction::Text(t) => t.clone(),
            Prediction::Units(d) => d.to_json(),
        };
        let bindings = HashMap::from([("gt", gt_json.as_str()), ("pred", pred_text.as_str())]);
        render_prompt(Template::Match, &bindings).expect("match template bindings are complete")
    }
}

#[async_trait]
impl Matcher for LlmMatcher {
    fn name(&self) -> &str {
        LLM_BACKEND
    }

    async fn match_prediction(&self, gt: &ReportDecomposition, pred: &Prediction) -> Result<MatchResult, MatchError> {
        let prompt = Self::prompt_for(gt, pred);
        let judged = self
            .client
            .complete_json(&prompt, |text| parse_match_reply(text, gt))
            .await
            .map_err(|e| match e {
                LlmError::Parse(p) => MatchError::MatchFailed(p.to_string()),
                other => MatchError::Backend(backend(other)),
            })?;
        if judged.repaired {
            tracing::warn!("judge returned inconsistent unit judgments; clamped");
        }
        Ok(judged.result)
    }
}

/// Generates MCQ items for one unit with the judge model.
pub struct LlmMcqGenerator {
    client: Arc<LlmClient>,
}

impl LlmMcqGenerator {
    pub fn new(client: Arc<LlmClient>) -> Self {
        LlmMcqGenerator { client }
    }

    pub async fn generate(&self, unit: &AbnormalityUnit, negative_name: &str) -> Result<McqSet, LlmError> {
        let unit_json = serde_json::to_string(unit).expect("unit serializes");
        let bindings = HashMap::from([("abnormality_json", unit_json.as_str()), ("negative_name", negative_name)]);
        let prompt = render_prompt(Template::Mcq, &bindings).expect("mcq template bindings are complete");
        self.client.complete_json(&prompt, parse_mcq_reply).await
    }
}
