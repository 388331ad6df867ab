//! Ground-truth vs. prediction matching.
//!
//! Every backend produces a [`MatchResult`]: one [`UnitJudgment`] per
//! ground-truth unit, in ground-truth order, plus the names of unmatched
//! predicted units. [`lexical_match`] is the deterministic reference matcher;
//! the judge-model matcher is provided by the LLM client crate.

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::SchemaError;
use crate::extract::{ExtractError, RuleBasedExtractor};
use crate::lexicon::lexicon;
use crate::registry::Registry;
use crate::text::{content_tokens, LATERALITY};
use crate::units::{AbnormalityUnit, ReportDecomposition};

/// Attribute strings match when their content-token Jaccard reaches this.
pub const ATTRIBUTE_JACCARD_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitJudgment {
    pub name: String,
    pub hit: bool,
    pub location_match: bool,
    pub attribute_match: bool,
}

impl UnitJudgment {
    pub fn miss(name: impl Into<String>) -> Self {
        UnitJudgment {
            name: name.into(),
            hit: false,
            location_match: false,
            attribute_match: false,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.hit || (!self.location_match && !self.attribute_match)
    }

    /// Forces sub-matches off on a miss. Returns whether anything changed.
    pub fn clamp(&mut self) -> bool {
        if self.is_consistent() {
            return false;
        }
        self.location_match = false;
        self.attribute_match = false;
        true
    }

    pub fn fully_matched(&self) -> bool {
        self.hit && self.location_match && self.attribute_match
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchResult {
    pub judgments: Vec<UnitJudgment>,
    pub false_positives: Vec<String>,
    /// `M`, the number of predicted abnormal entities.
    pub pred_count: usize,
}

impl MatchResult {
    pub fn hits(&self) -> usize {
        self.judgments.iter().filter(|j| j.hit).count()
    }

    /// `FP`.
    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }

    /// `K`.
    pub fn gt_count(&self) -> usize {
        self.judgments.len()
    }

    /// Checks the structural invariants against a ground truth of `k` units.
    pub fn validate(&self, k: usize) -> Result<(), SchemaError> {
        if self.judgments.len() != k {
            return Err(SchemaError::violation(
                "judgments",
                format!("expected {k} judgments, found {}", self.judgments.len()),
            ));
        }
        if let Some(i) = self.judgments.iter().position(|j| !j.is_consistent()) {
            return Err(SchemaError::violation(
                format!("judgments[{i}]"),
                "location_match and attribute_match must be false when hit is false",
            ));
        }
        if self.fp() > self.pred_count {
            return Err(SchemaError::violation(
                "false_positives",
                format!("{} false positives exceed pred_count {}", self.fp(), self.pred_count),
            ));
        }
        if self.hits() + self.fp() > self.pred_count {
            return Err(SchemaError::violation(
                "pred_count",
                format!("{} hits + {} false positives exceed pred_count {}", self.hits(), self.fp(), self.pred_count),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("match result serializes")
    }
}

pub fn parse_match_result(doc: &str, k: usize) -> Result<MatchResult, SchemaError> {
    let m: MatchResult = crate::error::from_json_str(doc)?;
    m.validate(k)?;
    Ok(m)
}

/// A prediction arrives either as report text or as already-extracted units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Text(String),
    Units(ReportDecomposition),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("matching failed: {0}")]
    MatchFailed(String),
    #[error("judge covered {got} ground-truth units, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Extraction(#[from] ExtractError),
    #[error("judge backend failure: {0}")]
    Backend(String),
}

#[async_trait]
pub trait Matcher: Send + Sync {
    fn name(&self) -> &str;

    async fn match_prediction(&self, gt: &ReportDecomposition, pred: &Prediction) -> Result<MatchResult, MatchError>;
}

pub type MatcherRegistry = Registry<dyn Matcher>;

pub fn builtin_matchers() -> MatcherRegistry {
    let mut reg = MatcherRegistry::new("matcher");
    reg.register(LexicalMatcher::NAME, Arc::new(LexicalMatcher::default()));
    reg
}

pub async fn match_reports(
    gt: &ReportDecomposition,
    pred: &Prediction,
    matcher: &dyn Matcher,
) -> Result<MatchResult, MatchError> {
    let result = matcher.match_prediction(gt, pred).await?;
    if result.judgments.len() != gt.len() {
        return Err(MatchError::LengthMismatch {
            expected: gt.len(),
            got: result.judgments.len(),
        });
    }
    Ok(result)
}

/// Lexical matcher; free-text predictions go through the rule-based
/// extractor first.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalMatcher {
    extractor: RuleBasedExtractor,
}

impl LexicalMatcher {
    pub const NAME: &'static str = "lexical";

    pub fn match_sync(&self, gt: &ReportDecomposition, pred: &Prediction) -> Result<MatchResult, MatchError> {
        let units = match pred {
            Prediction::Units(d) => d.abnormalities.clone(),
            Prediction::Text(t) if t.trim().is_empty() => Vec::new(),
            Prediction::Text(t) => self.extractor.extract_sync(t)?.abnormalities,
        };
        Ok(lexical_match(&gt.abnormalities, &units))
    }
}

#[async_trait]
impl Matcher for LexicalMatcher {
    fn name(&self) -> &str {
        Self::NAME
    }

    async fn match_prediction(&self, gt: &ReportDecomposition, pred: &Prediction) -> Result<MatchResult, MatchError> {
        self.match_sync(gt, pred)
    }
}

/// Names match when equal after normalization or when both are surface
/// forms of one lexicon entity.
pub fn names_match(a: &str, b: &str) -> bool {
    let lx = lexicon();
    lx.match_key(a) == lx.match_key(b)
}

/// An empty ground-truth location imposes no constraint. Otherwise every
/// laterality word of the ground truth must reappear and, when the ground
/// truth names anatomy beyond laterality, at least one such word must be
/// shared.
pub fn locations_match(gt: &str, pred: &str) -> bool {
    let g = content_tokens(gt);
    if g.is_empty() {
        return true;
    }
    let p = content_tokens(pred);
    if p.is_empty() {
        return false;
    }
    let is_lat = |t: &String| LATERALITY.contains(&t.as_str());
    if !g.iter().filter(|t| is_lat(t)).all(|t| p.contains(t)) {
        return false;
    }
    let anatomical: Vec<&String> = g.iter().filter(|t| !is_lat(t)).collect();
    anatomical.is_empty() || anatomical.iter().any(|t| p.contains(t))
}

pub fn attributes_match(gt: &str, pred: &str) -> bool {
    let g = content_tokens(gt);
    let p = content_tokens(pred);
    if g.is_empty() && p.is_empty() {
        return true;
    }
    let inter = g.iter().filter(|t| p.contains(t)).count();
    let union = g.len() + p.len() - inter;
    inter as f64 / union as f64 >= ATTRIBUTE_JACCARD_THRESHOLD
}

/// Greedy matching in ground-truth order; each ground-truth unit takes the
/// lowest-index unused prediction with a matching name.
pub fn lexical_match(gt: &[AbnormalityUnit], pred: &[AbnormalityUnit]) -> MatchResult {
    let mut used = vec![false; pred.len()];
    let judgments = gt
        .iter()
        .map(|g| {
            let found = pred
                .iter()
                .enumerate()
                .find(|(i, p)| !used[*i] && names_match(&g.name, &p.name));
            match found {
                Some((i, p)) => {
                    used[i] = true;
                    UnitJudgment {
                        name: g.name.clone(),
                        hit: true,
                        location_match: locations_match(&g.location, &p.location),
                        attribute_match: attributes_match(&g.attributes, &p.attributes),
                    }
                }
                None => UnitJudgment::miss(g.name.clone()),
            }
        })
        .collect();
    let false_positives = pred
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(p, _)| p.name.clone())
        .collect();
    MatchResult {
        judgments,
        false_positives,
        pred_count: pred.len(),
    }
}

/// Judge-model output as exchanged on the wire.
pub mod wire {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct JudgeOutput {
        pub abnormalities: Vec<UnitJudgment>,
        pub false_positive: Vec<NamedEntity>,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct NamedEntity {
        pub name: String,
    }

    /// Outcome of converting judge output, recording whether any judgment had
    /// to be clamped.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct JudgedMatch {
        pub result: MatchResult,
        pub repaired: bool,
    }

    impl JudgeOutput {
        /// Clamps inconsistent judgments, aligns them with the ground-truth
        /// order and derives `M` as hits plus false positives (each hit
        /// consumes exactly one predicted unit).
        pub fn into_match_result(self, gt: &ReportDecomposition) -> Result<JudgedMatch, MatchError> {
            let k = gt.len();
            if self.abnormalities.len() != k {
                return Err(MatchError::LengthMismatch {
                    expected: k,
                    got: self.abnormalities.len(),
                });
            }
            let mut judgments = align(self.abnormalities, gt)?;
            let mut repaired = false;
            for j in &mut judgments {
                repaired |= j.clamp();
            }
            let false_positives: Vec<String> = self.false_positive.into_iter().map(|n| n.name).collect();
            let hits = judgments.iter().filter(|j| j.hit).count();
            Ok(JudgedMatch {
                result: MatchResult {
                    pred_count: hits + false_positives.len(),
                    judgments,
                    false_positives,
                },
                repaired,
            })
        }
    }

    impl From<&MatchResult> for JudgeOutput {
        fn from(m: &MatchResult) -> Self {
            JudgeOutput {
                abnormalities: m.judgments.clone(),
                false_positive: m.false_positives.iter().map(|n| NamedEntity { name: n.clone() }).collect(),
            }
        }
    }

    /// Positional when names line up; otherwise reorders by name when that is
    /// unambiguous.
    fn align(judgments: Vec<UnitJudgment>, gt: &ReportDecomposition) -> Result<Vec<UnitJudgment>, MatchError> {
        let positional = judgments
            .iter()
            .zip(&gt.abnormalities)
            .all(|(j, u)| names_match(&j.name, &u.name));
        if positional {
            return Ok(judgments);
        }
        let mut pool: Vec<Option<UnitJudgment>> = judgments.into_iter().map(Some).collect();
        gt.abnormalities
            .iter()
            .map(|u| {
                pool.iter_mut()
                    .find(|slot| slot.as_ref().is_some_and(|j| names_match(&j.name, &u.name)))
                    .and_then(Option::take)
                    .ok_or_else(|| MatchError::MatchFailed(format!("no judgment for ground-truth unit {:?}", u.name)))
            })
            .collect()
    }
}
