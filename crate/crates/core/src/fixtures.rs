//! Reference documents shared by tests, examples and the CLI self-check.

use crate::units::{parse_decomposition, ReportDecomposition};

/// A three-unit decomposition in the canonical wire form.
pub const REFERENCE_DECOMPOSITION_JSON: &str = r#"{
  "abnormalities": [
{
  "name": "ground-glass opacity",
  "evidence": "Patchy ground-glass opacities are seen in the bilateral lower lungs with ill-defined margins",
  "location": "bilateral lower lungs",
  "attributes": "patchy distribution with ill-defined margins",
  "certainty": "definite",
  "organ": "lung"
},
{
  "name": "fatty liver",
  "evidence": "Diffuse decreased attenuation of the liver, consider fatty liver",
  "location": "liver",
  "attributes": "diffusely decreased attenuation",
  "certainty": "possible",
  "organ": "liver"
},
{
  "name": "pleural effusion",
  "evidence": "There is evidence of pleural effusion",
  "location": "",
  "attributes": "",
  "certainty": "definite",
  "organ": "lung"
}
  ],
  "report_has_abnormality": true
}"#;

/// Report text from which [`REFERENCE_DECOMPOSITION_JSON`] was extracted.
pub const REFERENCE_REPORT: &str = "Patchy ground-glass opacities are seen in the bilateral lower lungs with ill-defined margins. \
Diffuse decreased attenuation of the liver, consider fatty liver. There is evidence of pleural effusion.";

pub fn reference_decomposition() -> ReportDecomposition {
    parse_decomposition(REFERENCE_DECOMPOSITION_JSON).expect("reference document is valid")
}
