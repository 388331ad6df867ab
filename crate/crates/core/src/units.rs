//! Structured clinical facts and their canonical JSON form.
//!
//! A report is decomposed into an ordered list of [`AbnormalityUnit`]s. The
//! order is the document order of the source report and doubles as the
//! reference trajectory used by the trajectory-integral reward.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::SchemaError;

/// The closed set of organ labels a unit may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Organ {
    Trachea,
    Heart,
    Lung,
    Esophagus,
    Vessel,
    Spine,
    Liver,
    Pancreas,
    Spleen,
    Stomach,
    Bowel,
    Kidney,
    Other,
}

impl Organ {
    pub const ALL: [Organ; 13] = [
        Organ::Trachea,
        Organ::Heart,
        Organ::Lung,
        Organ::Esophagus,
        Organ::Vessel,
        Organ::Spine,
        Organ::Liver,
        Organ::Pancreas,
        Organ::Spleen,
        Organ::Stomach,
        Organ::Bowel,
        Organ::Kidney,
        Organ::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Organ::Trachea => "trachea",
            Organ::Heart => "heart",
            Organ::Lung => "lung",
            Organ::Esophagus => "esophagus",
            Organ::Vessel => "vessel",
            Organ::Spine => "spine",
            Organ::Liver => "liver",
            Organ::Pancreas => "pancreas",
            Organ::Spleen => "spleen",
            Organ::Stomach => "stomach",
            Organ::Bowel => "bowel",
            Organ::Kidney => "kidney",
            Organ::Other => "other",
        }
    }
}

impl fmt::Display for Organ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Organ {
    type Err = SchemaError;

    /// Strict parse of one of the 13 labels. Use [`canonical_organ`] for
    /// alias folding.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Organ::ALL
            .iter()
            .copied()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| SchemaError::violation("organ", format!("unknown organ label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Certainty {
    Definite,
    Possible,
}

/// One structured clinical fact.
///
/// Empty `location` / `attributes` mean "not stated"; they are always present
/// on the wire as empty strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbnormalityUnit {
    pub name: String,
    pub evidence: String,
    pub location: String,
    pub attributes: String,
    pub certainty: Certainty,
    pub organ: Organ,
}

impl AbnormalityUnit {
    pub fn new(name: impl Into<String>, organ: Organ) -> Self {
        let name = name.into();
        AbnormalityUnit {
            evidence: name.clone(),
            name,
            location: String::new(),
            attributes: String::new(),
            certainty: Certainty::Definite,
            organ,
        }
    }

    pub fn with_location(mut self, location: impl Into<String>) -> Self {
        self.location = location.into();
        self
    }

    pub fn with_attributes(mut self, attributes: impl Into<String>) -> Self {
        self.attributes = attributes.into();
        self
    }

    pub fn with_evidence(mut self, evidence: impl Into<String>) -> Self {
        self.evidence = evidence.into();
        self
    }

    pub fn with_certainty(mut self, certainty: Certainty) -> Self {
        self.certainty = certainty;
        self
    }

    fn validate_at(&self, path: &str) -> Result<(), SchemaError> {
        if self.name.trim().is_empty() {
            return Err(SchemaError::violation(format!("{path}.name"), "must be non-empty"));
        }
        if self.evidence.trim().is_empty() {
            return Err(SchemaError::violation(format!("{path}.evidence"), "must be non-empty"));
        }
        Ok(())
    }

    /// Tokens of `name` that also occur in this unit's own location or
    /// attribute strings. A clean extraction yields an empty list.
    ///
    /// This is advisory: real extractions such as `fatty liver` located in
    /// `liver` legitimately share a token, so parsing does not reject them.
    pub fn name_leaks(&self) -> Vec<String> {
        let context: Vec<String> = crate::text::content_tokens(&self.location)
            .into_iter()
            .chain(crate::text::content_tokens(&self.attributes))
            .collect();
        crate::text::content_tokens(&self.name)
            .into_iter()
            .filter(|t| context.contains(t))
            .collect()
    }
}

/// The structured decomposition of one report.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDecomposition {
    pub abnormalities: Vec<AbnormalityUnit>,
    pub report_has_abnormality: bool,
}

impl Default for ReportDecomposition {
    fn default() -> Self {
        ReportDecomposition::new(Vec::new())
    }
}

impl ReportDecomposition {
    /// Builds a decomposition whose flag is consistent with its units.
    pub fn new(abnormalities: Vec<AbnormalityUnit>) -> Self {
        let report_has_abnormality = !abnormalities.is_empty();
        ReportDecomposition {
            abnormalities,
            report_has_abnormality,
        }
    }

    /// Number of units, `K`.
    pub fn len(&self) -> usize {
        self.abnormalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abnormalities.is_empty()
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        self.validate_at("")
    }

    /// Validates with every reported path prefixed by `prefix`.
    pub fn validate_at(&self, prefix: &str) -> Result<(), SchemaError> {
        let join = |p: &str| {
            if prefix.is_empty() {
                p.to_string()
            } else {
                format!("{prefix}.{p}")
            }
        };
        for (i, unit) in self.abnormalities.iter().enumerate() {
            unit.validate_at(&join(&format!("abnormalities[{i}]")))?;
        }
        if self.report_has_abnormality == self.abnormalities.is_empty() {
            return Err(SchemaError::violation(
                join("report_has_abnormality"),
                format!(
                    "flag is {} but {} abnormalities are listed",
                    self.report_has_abnormality,
                    self.abnormalities.len()
                ),
            ));
        }
        Ok(())
    }

    /// Canonical compact JSON. Field order follows the struct definition, so
    /// the output is byte-stable.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("decomposition serializes")
    }
}

/// Parses and validates a decomposition document.
pub fn parse_decomposition(doc: &str) -> Result<ReportDecomposition, SchemaError> {
    let decomposition: ReportDecomposition = crate::error::from_json_str(doc)?;
    decomposition.validate()?;
    Ok(decomposition)
}

struct OrganAliases {
    version: u32,
    table: Vec<(String, Organ)>,
}

fn organ_aliases() -> &'static OrganAliases {
    static TABLE: OnceLock<OrganAliases> = OnceLock::new();
    TABLE.get_or_init(|| {
        #[derive(Deserialize)]
        struct File {
            version: u32,
            labels: std::collections::BTreeMap<Organ, Vec<String>>,
        }
        let file: File = serde_json::from_str(include_str!("../data/organs.json"))
            .expect("bundled organ table is valid");
        let mut table = Vec::new();
        for (organ, aliases) in file.labels {
            table.push((organ.as_str().to_string(), organ));
            for alias in aliases {
                table.push((fold_label(&alias), organ));
            }
        }
        OrganAliases {
            version: file.version,
            table,
        }
    })
}

/// Version of the bundled organ alias table.
pub fn organ_alias_version() -> u32 {
    organ_aliases().version
}

/// Every `(alias, organ)` pair in the bundled table, aliases already folded.
pub fn organ_alias_entries() -> impl Iterator<Item = (&'static str, Organ)> {
    organ_aliases().table.iter().map(|(a, o)| (a.as_str(), *o))
}

fn fold_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Folds a free-form organ label onto the 13-label set.
///
/// Matching is case- and whitespace-insensitive; anything non-empty that is
/// not in the alias table becomes [`Organ::Other`].
pub fn canonical_organ(label: &str) -> Result<Organ, SchemaError> {
    let folded = fold_label(label);
    if folded.is_empty() {
        return Err(SchemaError::EmptyLabel);
    }
    Ok(organ_aliases()
        .table
        .iter()
        .find(|(alias, _)| *alias == folded)
        .map(|(_, organ)| *organ)
        .unwrap_or(Organ::Other))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::REFERENCE_DECOMPOSITION_JSON as PROMPT_EXAMPLE;

    #[test]
    fn parses_reference_example() {
        let d = parse_decomposition(PROMPT_EXAMPLE).unwrap();
        assert_eq!(d.len(), 3);
        assert!(d.report_has_abnormality);
        assert_eq!(d.abnormalities[1].certainty, Certainty::Possible);
        assert_eq!(d.abnormalities[2].location, "");
        let names: Vec<_> = d.abnormalities.iter().map(|u| u.name.as_str()).collect();
        assert_eq!(names, ["ground-glass opacity", "fatty liver", "pleural effusion"]);
    }

    #[test]
    fn empty_decomposition() {
        let d = parse_decomposition(r#"{"abnormalities": [], "report_has_abnormality": false}"#).unwrap();
        assert_eq!(d.len(), 0);
    }

    #[test]
    fn bad_certainty_names_path() {
        let doc = PROMPT_EXAMPLE.replacen("\"definite\"", "\"suspected\"", 1);
        match parse_decomposition(&doc) {
            Err(SchemaError::SchemaViolation { path, .. }) => {
                assert_eq!(path, "abnormalities[0].certainty")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn every_non_enum_certainty_is_rejected() {
        for word in ["suspected", "Definite", "probable", "", "likely"] {
            let doc = PROMPT_EXAMPLE.replacen("\"definite\"", &format!("{word:?}"), 1);
            assert!(parse_decomposition(&doc).is_err(), "{word}");
        }
        for word in ["definite", "possible"] {
            let doc = PROMPT_EXAMPLE.replacen("\"definite\"", &format!("{word:?}"), 1);
            assert!(parse_decomposition(&doc).is_ok(), "{word}");
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let doc = r#"{"abnormalities": [], "report_has_abnormality": false, "extra": 1}"#;
        assert!(matches!(
            parse_decomposition(doc),
            Err(SchemaError::SchemaViolation { .. })
        ));
    }

    #[test]
    fn missing_field_and_flag_mismatch() {
        let doc = r#"{"abnormalities": [{"name": "nodule", "evidence": "nodule", "location": "",
            "certainty": "definite", "organ": "lung"}], "report_has_abnormality": true}"#;
        let err = parse_decomposition(doc).unwrap_err();
        assert!(err.to_string().contains("attributes"), "{err}");

        let doc = r#"{"abnormalities": [], "report_has_abnormality": true}"#;
        match parse_decomposition(doc) {
            Err(SchemaError::SchemaViolation { path, .. }) => assert_eq!(path, "report_has_abnormality"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(
            parse_decomposition("{\"abnormalities\": ["),
            Err(SchemaError::MalformedJson { .. })
        ));
    }

    #[test]
    fn organ_folding() {
        assert_eq!(canonical_organ("lung").unwrap(), Organ::Lung);
        assert_eq!(canonical_organ("Lungs").unwrap(), Organ::Lung);
        assert_eq!(canonical_organ("  LUNGS ").unwrap(), Organ::Lung);
        assert_eq!(canonical_organ("mediastinum").unwrap(), Organ::Other);
        assert_eq!(canonical_organ("Small   Bowel").unwrap(), Organ::Bowel);
        assert!(matches!(canonical_organ("   "), Err(SchemaError::EmptyLabel)));
    }

    #[test]
    fn alias_table_is_consistent() {
        // every alias maps to exactly one organ and every label maps to itself
        let mut seen = std::collections::HashMap::new();
        for (alias, organ) in organ_alias_entries() {
            if let Some(prev) = seen.insert(alias, organ) {
                assert_eq!(prev, organ, "alias {alias} maps to two organs");
            }
            assert_eq!(canonical_organ(alias).unwrap(), organ);
        }
        for organ in Organ::ALL {
            assert_eq!(canonical_organ(organ.as_str()).unwrap(), organ);
        }
        assert_eq!(organ_alias_version(), 1);
    }

    #[test]
    fn name_leak_lint() {
        let d = parse_decomposition(PROMPT_EXAMPLE).unwrap();
        assert!(d.abnormalities[0].name_leaks().is_empty());
        assert_eq!(d.abnormalities[1].name_leaks(), vec!["liver".to_string()]);
    }
}
