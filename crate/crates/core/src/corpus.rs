//! JSONL case records shared by the command-line pipelines.

use serde::{Deserialize, Serialize};

use crate::error::{from_json_str, SchemaError};
use crate::units::ReportDecomposition;

/// One evaluation case. Either side may be given as text, as units or both;
/// units win when both are present.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_units: Option<ReportDecomposition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_units: Option<ReportDecomposition>,
}

impl CaseRecord {
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.case_id.trim().is_empty() {
            return Err(SchemaError::violation("case_id", "must be non-empty"));
        }
        if let Some(gt) = &self.gt_units {
            gt.validate_at("gt_units")?;
        }
        if let Some(pred) = &self.pred_units {
            pred.validate_at("pred_units")?;
        }
        Ok(())
    }
}

/// Parses and validates every non-blank line. Error paths are prefixed with
/// `line N`.
pub fn parse_jsonl<T: serde::de::DeserializeOwned>(doc: &str) -> Result<Vec<T>, SchemaError> {
    doc.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| from_json_str::<T>(l).map_err(|e| e.nested(&format!("line {}", i + 1))))
        .collect()
}

pub fn parse_cases(doc: &str) -> Result<Vec<CaseRecord>, SchemaError> {
    let cases: Vec<CaseRecord> = parse_jsonl(doc)?;
    for (i, c) in cases.iter().enumerate() {
        c.validate().map_err(|e| e.nested(&format!("line {}", i + 1)))?;
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::reference_decomposition;

    #[test]
    fn jsonl_round_trip() {
        let c = CaseRecord {
            case_id: "c1".into(),
            gt_units: Some(reference_decomposition()),
            pred_report: Some("Cardiomegaly is noted.".into()),
            ..Default::default()
        };
        let line = serde_json::to_string(&c).unwrap();
        let parsed = parse_cases(&format!("{line}\n\n{line}\n")).unwrap();
        assert_eq!(parsed, vec![c.clone(), c]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_cases("{\"case_id\":\"a\"}\n{\"case_id\":\"b\",\"extra\":1}\n").unwrap_err();
        assert!(err.path().starts_with("line 2"), "{err:?}");
    }
}
