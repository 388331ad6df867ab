//! Shared text normalization.

/// Function words ignored when comparing anatomical or attribute phrases.
const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "and", "or", "to", "with", "within", "is", "are", "seen", "noted",
];

pub const LATERALITY: [&str; 3] = ["left", "right", "bilateral"];

/// Lowercases, turns hyphens and punctuation into spaces and collapses runs
/// of whitespace. `"Ground-glass  Opacity."` becomes `"ground glass opacity"`.
pub fn normalize_phrase(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalized word tokens of a phrase.
pub fn word_tokens(s: &str) -> Vec<String> {
    normalize_phrase(s).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// Normalized tokens with function words removed, duplicates dropped,
/// first-occurrence order kept.
pub fn content_tokens(s: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in word_tokens(s) {
        if !STOPWORDS.contains(&t.as_str()) && !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Surface tokenizer shared by BLEU and ROUGE-L: lowercase, punctuation split
/// into separate tokens, whitespace split.
pub fn surface_tokens(s: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in s.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}
