//! Prompt templates for extraction, matching and MCQ generation.
//!
//! Placeholders are `{name}` for the names listed by [`Template::placeholders`].
//! Any other brace pair, such as the JSON examples in the templates, is left
//! alone, and substituted values are never rescanned.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("missing binding for placeholder {0:?}")]
    MissingBinding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    Extract,
    Match,
    Mcq,
}

const EXTRACT: &str = r#"You are structuring a radiology report. Read the report below and list every abnormality it states as present.

Rules:
- Keep only abnormalities the text explicitly affirms. Skip negated or excluded findings, normal anatomy, and statements about scan technique.
- If the same abnormality is described more than once, emit a single entry for it.
- "name" holds the bare abnormality term only. Put anatomy in "location" and descriptors such as size, severity, shape or density in "attributes". Use "" when the text gives none.
- "evidence" quotes the sentence or clause that supports the entry.
- "certainty" is "definite", or "possible" when the text hedges.
- "organ" is one of: lung, trachea, heart, esophagus, stomach, liver, spleen, pancreas, kidney, bowel, vessel, spine, other.
- "report_has_abnormality" is false exactly when the list is empty.

Answer with a single JSON object and nothing else, shaped like:
{"abnormalities":[{"name":"","evidence":"","location":"","attributes":"","certainty":"definite","organ":"other"}],"report_has_abnormality":true}

Report:
{report}"#;

const MATCH: &str = r#"You are judging a generated radiology report against reference abnormalities.

Reference abnormalities (JSON):
{gt}

Generated report:
{pred}

Procedure:
1. Treat the reference list as fixed. Do not add, drop, split or merge reference entries.
2. Pull the abnormalities out of the generated report with the same rules: affirmed findings only, bare names, no negated or normal statements.
3. Pair each reference entry with at most one generated abnormality that means the same thing clinically. Set "hit" to true when a partner exists.
4. For a hit, "location_match" says whether the anatomy agrees, and "attribute_match" whether the descriptors agree; each is also true when neither side states that field. Both must be false whenever "hit" is false.
5. Every generated abnormality left without a partner goes into "false_positive".

Judge only from what is written. Answer with a single JSON object and nothing else, with one "abnormalities" entry per reference entry in reference order:
{"abnormalities":[{"name":"","hit":false,"location_match":false,"attribute_match":false}],"false_positive":[{"name":""}]}"#;

const MCQ: &str = r#"Write multiple-choice questions for a chest CT visual question answering set. The person answering sees only the images, so every question must be answerable by looking at the scan and must not mention any written document or its sections.

Target abnormality (JSON):
{abnormality_json}

An abnormality that is absent from this scan: {negative_name}

Produce these items:
- "existence_positive": ask whether the target abnormality is visible. Options are Yes and No in either order; the key is Yes.
- "existence_negative": ask the same about the absent abnormality. Options are Yes and No; the key is No.
- "location": only when the target has a non-empty location. Four anatomical options, exactly one consistent with the true location.
- "attribute": only when the target has non-empty attributes. Four appearance options, exactly one consistent with the true attributes.

Phrase questions from the viewer's side, for example starting with "On this chest CT". Letter the options "A. ", "B. " and so on, and give only the letter as the answer.

Answer with a single JSON object and nothing else:
{"items":[{"type":"existence_positive","question":"","options":["A. Yes","B. No"],"answer":"A"}]}"#;

/// Appended to the original prompt for the single strict retry.
pub const STRICT_SUFFIX: &str = "\n\nYour previous answer could not be used: {error}\nReply again with only the JSON object, with no code fences and no commentary.";

impl Template {
    pub fn text(self) -> &'static str {
        match self {
            Template::Extract => EXTRACT,
            Template::Match => MATCH,
            Template::Mcq => MCQ,
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            Template::Extract => &["report"],
            Template::Match => &["gt", "pred"],
            Template::Mcq => &["abnormality_json", "negative_name"],
        }
    }
}

/// Replaces each `{name}` in `text` for the given names, in one left-to-right
/// pass. Text without those placeholders comes back unchanged.
pub fn substitute(text: &str, names: &[&str], bindings: &HashMap<&str, &str>) -> Result<String, PromptError> {
    for name in names {
        if !bindings.contains_key(name) && text.contains(&format!("{{{name}}}")) {
            return Err(PromptError::MissingBinding(name.to_string()));
        }
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = names.iter().find(|n| after.starts_with(*n) && after[n.len()..].starts_with('}'));
        match hit {
            Some(name) => {
                out.push_str(bindings[name]);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render_prompt(template: Template, bindings: &HashMap<&str, &str>) -> Result<String, PromptError> {
    for name in template.placeholders() {
        if !bindings.contains_key(name) {
            return Err(PromptError::MissingBinding(name.to_string()));
        }
    }
    substitute(template.text(), template.placeholders(), bindings)
}

pub fn strict_reprompt(prompt: &str, error: &str) -> String {
    let mut b = HashMap::new();
    b.insert("error", error);
    let suffix = substitute(STRICT_SUFFIX, &["error"], &b).expect("error is bound");
    format!("{prompt}{suffix}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind<'a>(pairs: &[(&'a str, &'a str)]) -> HashMap<&'a str, &'a str> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn extract_contains_report_once() {
        let p = render_prompt(Template::Extract, &bind(&[("report", "No effusion.")])).unwrap();
        assert_eq!(p.matches("No effusion.").count(), 1);
        assert!(!p.contains("{report}"));
        assert!(p.contains(r#""report_has_abnormality":true}"#));
    }

    #[test]
    fn missing_binding() {
        assert_eq!(
            render_prompt(Template::Match, &bind(&[("gt", "[]")])),
            Err(PromptError::MissingBinding("pred".into()))
        );
    }

    #[test]
    fn values_are_not_rescanned() {
        let p = render_prompt(Template::Match, &bind(&[("gt", "{pred}"), ("pred", "x")])).unwrap();
        assert!(p.contains("(JSON):\n{pred}\n"));
    }

    #[test]
    fn rendering_is_idempotent() {
        let b = bind(&[("abnormality_json", "{}"), ("negative_name", "ascites")]);
        let once = render_prompt(Template::Mcq, &b).unwrap();
        let names = Template::Mcq.placeholders();
        assert_eq!(substitute(&once, names, &b).unwrap(), once);
        assert_eq!(substitute("plain {json} text", names, &HashMap::new()).unwrap(), "plain {json} text");
    }

    #[test]
    fn templates_keep_wire_keys() {
        for key in ["name", "evidence", "location", "attributes", "certainty", "organ", "report_has_abnormality"] {
            assert!(EXTRACT.contains(&format!("\"{key}\"")), "{key}");
        }
        for key in ["abnormalities", "hit", "location_match", "attribute_match", "false_positive"] {
            assert!(MATCH.contains(&format!("\"{key}\"")), "{key}");
        }
        for key in ["items", "type", "question", "options", "answer"] {
            assert!(MCQ.contains(&format!("\"{key}\"")), "{key}");
        }
        for word in cabs_core::mcq::FORBIDDEN_WORDS {
            assert!(!MCQ.to_lowercase().contains(word), "{word}");
        }
    }
}
