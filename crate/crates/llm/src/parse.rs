//! Strict parsing of model replies.
//!
//! A reply must be one JSON object, optionally wrapped in a single code
//! fence. Prose around the object is rejected rather than scraped.

use cabs_core::error::{from_json_str, SchemaError};
use cabs_core::matching::wire::{JudgeOutput, JudgedMatch};
use cabs_core::matching::MatchError;
use cabs_core::mcq::McqSet;
use cabs_core::units::ReportDecomposition;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unparseable reply: {0}")]
    Unparseable(String),
    #[error("schema violation at {path}: {rule}")]
    SchemaViolation { path: String, rule: String },
}

impl From<SchemaError> for ParseError {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::SchemaViolation { path, rule } => ParseError::SchemaViolation { path, rule },
            SchemaError::MalformedJson { path, message } => ParseError::Unparseable(format!("{message} at {path}")),
            SchemaError::EmptyLabel => ParseError::SchemaViolation {
                path: "organ".into(),
                rule: "must be non-empty".into(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Decomposition,
    Match,
    Mcq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Decomposition(ReportDecomposition),
    Match(JudgeOutput),
    Mcq(McqSet),
}

/// Removes one surrounding ```` ``` ```` fence (with optional language tag)
/// when the whole reply is fenced.
pub fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(body) = t.strip_prefix("```") else {
        return t;
    };
    let Some(body) = body.strip_suffix("```") else {
        return t;
    };
    match body.find('\n') {
        Some(nl) if body[..nl].chars().all(|c| c.is_ascii_alphanumeric()) => body[nl + 1..].trim(),
        _ => body.trim(),
    }
}

fn object_text(text: &str) -> Result<&str, ParseError> {
    let body = strip_fence(text);
    if !body.starts_with('{') {
        return Err(ParseError::Unparseable("reply is not a single JSON object".into()));
    }
    Ok(body)
}

pub fn parse_decomposition_reply(text: &str) -> Result<ReportDecomposition, ParseError> {
    Ok(cabs_core::units::parse_decomposition(object_text(text)?)?)
}

pub fn parse_judge_reply(text: &str) -> Result<JudgeOutput, ParseError> {
    Ok(from_json_str(object_text(text)?)?)
}

/// Judge reply converted to a match result against `gt`, with inconsistent
/// judgments clamped and flagged.
pub fn parse_match_reply(text: &str, gt: &ReportDecomposition) -> Result<JudgedMatch, ParseError> {
    let judge = parse_judge_reply(text)?;
    judge.into_match_result(gt).map_err(|e| match e {
        MatchError::LengthMismatch { expected, got } => ParseError::SchemaViolation {
            path: "abnormalities".into(),
            rule: format!("expected {expected} entries, got {got}"),
        },
        other => ParseError::SchemaViolation {
            path: "abnormalities".into(),
            rule: other.to_string(),
        },
    })
}

pub fn parse_mcq_reply(text: &str) -> Result<McqSet, ParseError> {
    Ok(cabs_core::mcq::parse_mcq_set(object_text(text)?)?)
}

pub fn parse_json_response(text: &str, schema: Schema) -> Result<Parsed, ParseError> {
    Ok(match schema {
        Schema::Decomposition => Parsed::Decomposition(parse_decomposition_reply(text)?),
        Schema::Match => Parsed::Match(parse_judge_reply(text)?),
        Schema::Mcq => Parsed::Mcq(parse_mcq_reply(text)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cabs_core::fixtures::reference_decomposition;

    const JUDGE: &str = r#"{"abnormalities":[{"name":"ground-glass opacity","hit":true,"location_match":true,"attribute_match":false},{"name":"fatty liver","hit":false,"location_match":false,"attribute_match":false},{"name":"pleural effusion","hit":true,"location_match":false,"attribute_match":true}],"false_positive":[{"name":"cardiomegaly"}]}"#;

    #[test]
    fn fenced_judge_reply() {
        let fenced = format!("```json\n{JUDGE}\n```");
        let m = parse_match_reply(&fenced, &reference_decomposition()).unwrap();
        assert!(!m.repaired);
        assert_eq!(m.result.hits(), 2);
        assert_eq!(m.result.pred_count, 3);
        assert_eq!(parse_json_response(&format!("```\n{JUDGE}```"), Schema::Match).unwrap(), Parsed::Match(parse_judge_reply(JUDGE).unwrap()));
    }

    #[test]
    fn prose_is_rejected() {
        let prose = format!("Here is the result: {JUDGE}");
        assert!(matches!(parse_judge_reply(&prose), Err(ParseError::Unparseable(_))));
        assert!(matches!(parse_judge_reply(&format!("{JUDGE} done")), Err(ParseError::Unparseable(_))));
    }

    #[test]
    fn clamp_repair_is_flagged() {
        let bad = JUDGE.replacen(
            r#""hit":false,"location_match":false"#,
            r#""hit":false,"location_match":true"#,
            1,
        );
        let m = parse_match_reply(&bad, &reference_decomposition()).unwrap();
        assert!(m.repaired);
        assert!(!m.result.judgments[1].location_match);
    }

    #[test]
    fn schema_errors_carry_paths() {
        let bad = JUDGE.replacen(r#""hit":true"#, r#""hit":"yes""#, 1);
        match parse_judge_reply(&bad) {
            Err(ParseError::SchemaViolation { path, .. }) => assert_eq!(path, "abnormalities[0].hit"),
            other => panic!("{other:?}"),
        }
        let short = r#"{"abnormalities":[],"false_positive":[]}"#;
        assert!(matches!(
            parse_match_reply(short, &reference_decomposition()),
            Err(ParseError::SchemaViolation { .. })
        ));
    }
}
