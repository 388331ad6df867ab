//! Report text to abnormality units.
//!
//! Backends implement [`Extractor`]. The bundled [`RuleBasedExtractor`] is a
//! deterministic lexicon scanner; model-backed extractors live in the LLM
//! client crate and register under their own names.

use async_trait::async_trait;
use thiserror::Error;

use crate::lexicon::{lexicon, Mention};
use crate::registry::Registry;
use crate::units::{canonical_organ, AbnormalityUnit, Certainty, Organ, ReportDecomposition};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("report text is empty")]
    EmptyReport,
    #[error("extraction failed: {0}")]
    ExtractionFailed(String),
    #[error("extraction backend failure: {0}")]
    Backend(String),
}

#[async_trait]
pub trait Extractor: Send + Sync {
    fn name(&self) -> &str;

    async fn extract(&self, report: &str) -> Result<ReportDecomposition, ExtractError>;
}

pub type ExtractorRegistry = Registry<dyn Extractor>;

/// Registry with every backend that needs no external service.
pub fn builtin_extractors() -> ExtractorRegistry {
    let mut reg = ExtractorRegistry::new("extractor");
    reg.register(RuleBasedExtractor::NAME, std::sync::Arc::new(RuleBasedExtractor));
    reg
}

/// Runs `extractor` on `report`, rejecting blank input up front.
pub async fn extract_units(report: &str, extractor: &dyn Extractor) -> Result<ReportDecomposition, ExtractError> {
    if report.trim().is_empty() {
        return Err(ExtractError::EmptyReport);
    }
    extractor.extract(report).await
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedExtractor;

impl RuleBasedExtractor {
    pub const NAME: &'static str = "rule_based";

    pub fn extract_sync(&self, report: &str) -> Result<ReportDecomposition, ExtractError> {
        if report.trim().is_empty() {
            return Err(ExtractError::EmptyReport);
        }
        let lx = lexicon();
        let mut units: Vec<AbnormalityUnit> = Vec::new();
        for sentence in split_sentences(report) {
            let tokens = tokenize(sentence);
            let words: Vec<String> = tokens.iter().filter_map(Token::word).map(str::to_string).collect();
            if is_negated(&words) {
                continue;
            }
            let certainty = if is_hedged(&words) {
                Certainty::Possible
            } else {
                Certainty::Definite
            };
            let word_pos: Vec<usize> = tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| t.word().is_some())
                .map(|(i, _)| i)
                .collect();
            let mentions: Vec<Mention> = lx
                .find_mentions(&words)
                .into_iter()
                .map(|m| Mention {
                    start: word_pos[m.start],
                    end: word_pos[m.end - 1] + 1,
                    entry: m.entry,
                })
                .collect();
            for m in &mentions {
                let entry = lx.entry(m.entry);
                let location = find_location(sentence, &tokens, &mentions, m);
                let attributes = find_attributes(sentence, &tokens, &mentions, m);
                let organ = entry
                    .organ
                    .or_else(|| organ_from_text(&location))
                    .or_else(|| organ_from_text(sentence))
                    .unwrap_or(Organ::Other);
                let unit = AbnormalityUnit {
                    name: entry.name.clone(),
                    evidence: sentence.trim().to_string(),
                    location,
                    attributes,
                    certainty,
                    organ,
                };
                merge_into(&mut units, unit);
            }
        }
        Ok(ReportDecomposition::new(units))
    }
}

#[async_trait]
impl Extractor for RuleBasedExtractor {
    fn name(&self) -> &str {
        Self::NAME
    }

    async fn extract(&self, report: &str) -> Result<ReportDecomposition, ExtractError> {
        self.extract_sync(report)
    }
}

/// Repeated mentions of one abnormality collapse into the first, which
/// inherits any location or attributes it lacked.
fn merge_into(units: &mut Vec<AbnormalityUnit>, unit: AbnormalityUnit) {
    match units.iter_mut().find(|u| u.name == unit.name) {
        Some(existing) => {
            if existing.location.is_empty() {
                existing.location = unit.location;
            }
            if existing.attributes.is_empty() {
                existing.attributes = unit.attributes;
            }
        }
        None => units.push(unit),
    }
}

const NEGATION_WORDS: &[&str] = &["no", "without"];
const NEGATION_PHRASES: &[&[&str]] = &[&["not", "seen"], &["negative", "for"]];
const HEDGE_WORDS: &[&str] = &[
    "possible", "possibly", "consider", "suspected", "suspicious", "likely", "probable", "probably", "questionable",
    "suggestive", "may",
];
const HEDGE_PHRASES: &[&[&str]] = &[&["cannot", "exclude"], &["cannot", "be", "excluded"]];

/// Words that terminate an attribute run scanning leftwards from a mention.
const ATTRIBUTE_STOPS: &[&str] = &[
    "there", "is", "are", "was", "were", "a", "an", "the", "of", "in", "on", "at", "seen", "noted", "evidence",
    "shows", "show", "demonstrates", "findings", "include", "includes", "also", "and", "for", "identified",
    "again", "to", "as", "cannot", "exclude",
];
/// Words that end a location phrase.
const LOCATION_BREAKS: &[&str] = &[
    "with", "and", "which", "that", "is", "are", "was", "were", "measuring", "consistent", "likely", "suggesting",
    "there", "noted", "seen",
];
const LOCATIVES: &[&str] = &["in", "within", "at", "of", "involving"];
const ARTICLES: &[&str] = &["the", "a", "an"];

fn contains_phrase(words: &[String], phrase: &[&str]) -> bool {
    words.windows(phrase.len()).any(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
}

fn is_negated(words: &[String]) -> bool {
    words.iter().any(|w| NEGATION_WORDS.contains(&w.as_str()))
        || NEGATION_PHRASES.iter().any(|p| contains_phrase(words, p))
}

fn is_hedged(words: &[String]) -> bool {
    words.iter().any(|w| HEDGE_WORDS.contains(&w.as_str())) || HEDGE_PHRASES.iter().any(|p| contains_phrase(words, p))
}

/// Splits on `.`, `!`, `?` followed by whitespace or end of text, and on
/// `;` and newlines. Decimal points survive.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        let next_is_break = chars.get(k + 1).map(|(_, n)| n.is_whitespace()).unwrap_or(true);
        let boundary = matches!(c, ';' | '\n') || (matches!(c, '.' | '!' | '?') && next_is_break);
        if boundary {
            let s = text[start..i].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + c.len_utf8();
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

#[derive(Debug, Clone)]
enum Token {
    /// lowercase word with its byte span in the sentence
    Word(String, usize, usize),
    /// clause-breaking punctuation
    Break(char),
}

impl Token {
    fn word(&self) -> Option<&str> {
        match self {
            Token::Word(w, _, _) => Some(w),
            Token::Break(_) => None,
        }
    }
}

fn tokenize(sentence: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    let flush = |tokens: &mut Vec<Token>, start: &mut Option<usize>, end: usize| {
        if let Some(s) = start.take() {
            tokens.push(Token::Word(sentence[s..end].to_lowercase(), s, end));
        }
    };
    for (i, c) in sentence.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else {
            flush(&mut tokens, &mut start, i);
            if matches!(c, ',' | ':' | '(' | ')') {
                tokens.push(Token::Break(c));
            }
        }
    }
    flush(&mut tokens, &mut start, sentence.len());
    tokens
}

fn span_text(sentence: &str, tokens: &[Token], from: usize, to: usize) -> String {
    let first = tokens[from..to].iter().find_map(|t| match t {
        Token::Word(_, s, _) => Some(*s),
        Token::Break(_) => None,
    });
    let last = tokens[from..to].iter().rev().find_map(|t| match t {
        Token::Word(_, _, e) => Some(*e),
        Token::Break(_) => None,
    });
    match (first, last) {
        (Some(s), Some(e)) => sentence[s..e].to_lowercase(),
        _ => String::new(),
    }
}

fn inside_mention(mentions: &[Mention], idx: usize) -> bool {
    mentions.iter().any(|m| idx >= m.start && idx < m.end)
}

/// Reads a location phrase starting at the locative word at `at`. Returns the
/// token range of the phrase, if any.
fn location_phrase(tokens: &[Token], mentions: &[Mention], at: usize) -> Option<(usize, usize)> {
    let mut i = at + 1;
    while i < tokens.len() && matches!(tokens[i].word(), Some(w) if ARTICLES.contains(&w)) {
        i += 1;
    }
    let start = i;
    while i < tokens.len() {
        match tokens[i].word() {
            Some(w) if !LOCATION_BREAKS.contains(&w) && !inside_mention(mentions, i) => i += 1,
            _ => break,
        }
    }
    (i > start).then_some((start, i))
}

fn find_location(sentence: &str, tokens: &[Token], mentions: &[Mention], target: &Mention) -> String {
    let phrases: Vec<(usize, usize)> = tokens
        .iter()
        .enumerate()
        .filter(|(i, t)| matches!(t.word(), Some(w) if LOCATIVES.contains(&w)) && !inside_mention(mentions, *i))
        .filter_map(|(i, _)| location_phrase(tokens, mentions, i))
        .collect();
    let after = phrases.iter().find(|(s, _)| *s >= target.end);
    let before = phrases.iter().rev().find(|(_, e)| *e <= target.start);
    match after.or(before) {
        Some(&(s, e)) => span_text(sentence, tokens, s, e),
        None => String::new(),
    }
}

fn find_attributes(sentence: &str, tokens: &[Token], mentions: &[Mention], target: &Mention) -> String {
    // leftward run of modifier words directly before the mention
    let modifier_run = |mut start: usize| {
        while start > 0 {
            let prev = start - 1;
            match tokens[prev].word() {
                Some(w) if !ATTRIBUTE_STOPS.contains(&w) && !HEDGE_WORDS.contains(&w) && !inside_mention(mentions, prev) => {
                    start = prev
                }
                _ => break,
            }
        }
        start
    };
    let mut start = modifier_run(target.start);
    // comma-separated modifier lists, unless the earlier segment is a
    // leading locative phrase ("In the left lung, ...")
    while start >= 2 && matches!(tokens[start - 1], Token::Break(',')) && tokens[start - 2].word().is_some() {
        let seg = modifier_run(start - 1);
        if seg == start - 1 {
            break;
        }
        let stop = seg.checked_sub(1).and_then(|i| tokens[i].word().map(|w| (i, w)));
        let locative = match stop {
            Some((i, "of")) => !(i > 0 && tokens[i - 1].word() == Some("evidence")),
            Some((_, w)) if LOCATIVES.contains(&w) => true,
            Some((i, w)) if ARTICLES.contains(&w) => i > 0 && tokens[i - 1].word().is_some_and(|p| LOCATIVES.contains(&p)),
            _ => false,
        };
        if locative {
            break;
        }
        start = seg;
    }
    let prefix = span_text(sentence, tokens, start, target.start);

    // a trailing "with ..." clause, possibly after an intervening location
    let mut suffix = String::new();
    let mut i = target.end;
    while i < tokens.len() {
        match tokens[i].word() {
            Some("with") => {
                let s = i;
                let mut e = i + 1;
                while e < tokens.len()
                    && matches!(tokens[e].word(), Some(w) if w != "and" && w != "which")
                    && !inside_mention(mentions, e)
                {
                    e += 1;
                }
                if e > s + 1 {
                    suffix = span_text(sentence, tokens, s, e);
                }
                break;
            }
            Some(_) if !inside_mention(mentions, i) => i += 1,
            _ => break,
        }
    }
    match (prefix.is_empty(), suffix.is_empty()) {
        (_, true) => prefix,
        (true, false) => suffix,
        (false, false) => format!("{prefix} {suffix}"),
    }
}

/// First organ keyword (single word or bigram) found in `text`.
fn organ_from_text(text: &str) -> Option<Organ> {
    let words = crate::text::word_tokens(text);
    for i in 0..words.len() {
        if i + 1 < words.len() {
            let bigram = format!("{} {}", words[i], words[i + 1]);
            if let Some(o) = keyword_organ(&bigram) {
                return Some(o);
            }
        }
        if let Some(o) = keyword_organ(&words[i]) {
            return Some(o);
        }
    }
    None
}

fn keyword_organ(word: &str) -> Option<Organ> {
    crate::units::organ_alias_entries()
        .find(|(alias, organ)| *alias == word && *organ != Organ::Other)
        .and_then(|(alias, _)| canonical_organ(alias).ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render_report, Phrasing};

    fn run(text: &str) -> ReportDecomposition {
        RuleBasedExtractor.extract_sync(text).unwrap()
    }

    #[test]
    fn ground_glass_sentence() {
        let d = run("Patchy ground-glass opacities are seen in the bilateral lower lungs");
        assert_eq!(d.len(), 1);
        let u = &d.abnormalities[0];
        assert_eq!(u.name, "ground-glass opacity");
        assert_eq!(u.organ, Organ::Lung);
        assert_eq!(u.location, "bilateral lower lungs");
        assert_eq!(u.attributes, "patchy");
        assert_eq!(u.certainty, Certainty::Definite);
    }

    #[test]
    fn negated_sentence_is_dropped() {
        assert_eq!(run("No pleural effusion.").len(), 0);
        assert_eq!(run("Pneumothorax is not seen. Negative for pulmonary embolism.").len(), 0);
        assert!(matches!(RuleBasedExtractor.extract_sync("  "), Err(ExtractError::EmptyReport)));
    }

    #[test]
    fn reference_report_text() {
        let text = "Patchy ground-glass opacities are seen in the bilateral lower lungs with ill-defined margins. \
                    Diffuse decreased attenuation of the liver, consider fatty liver. \
                    There is evidence of pleural effusion.";
        let d = run(text);
        let names: Vec<_> = d.abnormalities.iter().map(|u| u.name.as_str()).collect();
        assert_eq!(names, ["ground-glass opacity", "fatty liver", "pleural effusion"]);
        assert_eq!(d.abnormalities[0].attributes, "patchy with ill-defined margins");
        assert_eq!(d.abnormalities[1].certainty, Certainty::Possible);
        assert_eq!(d.abnormalities[1].location, "liver");
        assert_eq!(d.abnormalities[1].organ, Organ::Liver);
        assert_eq!(d.abnormalities[2].location, "");
        assert_eq!(d.abnormalities[2].attributes, "");
    }

    #[test]
    fn organ_from_location_keyword() {
        let d = run("In the right upper lobe, 5 mm nodule is noted.");
        let u = &d.abnormalities[0];
        assert_eq!((u.name.as_str(), u.location.as_str(), u.attributes.as_str()), ("nodule", "right upper lobe", "5 mm"));
        assert_eq!(u.organ, Organ::Lung);
        let d = run("Hypodense cyst in the left kidney.");
        assert_eq!(d.abnormalities[0].organ, Organ::Kidney);
    }

    #[test]
    fn repeated_mentions_merge() {
        let d = run("Small nodule. The nodule is in the left lower lobe.");
        assert_eq!(d.len(), 1);
        assert_eq!(d.abnormalities[0].location, "left lower lobe");
        assert_eq!(d.abnormalities[0].attributes, "small");
    }

    #[test]
    fn decimal_points_do_not_split() {
        assert_eq!(split_sentences("A 5.2 mm nodule. Cyst."), ["A 5.2 mm nodule", "Cyst"]);
    }

    #[test]
    fn recovers_rendered_units() {
        let report = ReportDecomposition::new(vec![
            AbnormalityUnit::new("pulmonary nodule", Organ::Lung)
                .with_location("left lower lobe")
                .with_attributes("spiculated"),
            AbnormalityUnit::new("cyst", Organ::Liver).with_location("liver segment 8"),
            AbnormalityUnit::new("splenomegaly", Organ::Spleen).with_attributes("mild"),
            AbnormalityUnit::new("ascites", Organ::Other),
        ]);
        for phrasing in [Phrasing::Canonical, Phrasing::Varied(1), Phrasing::Varied(2), Phrasing::Varied(3)] {
            let text = render_report(&report, phrasing);
            let back = run(&text);
            for unit in &report.abnormalities {
                let got = back.abnormalities.iter().find(|u| u.name == unit.name).unwrap_or_else(|| panic!("{text}"));
                assert_eq!(got.location, unit.location, "{text}");
                assert_eq!(got.attributes, unit.attributes, "{text}");
                assert_eq!(got.organ, unit.organ, "{text}");
            }
        }
    }
}
