//! Bundled entity lexicon and vocabulary pools.
//!
//! The lexicon maps surface forms (plurals, common synonyms) of abnormality
//! names onto one canonical name and, where the entity implies one, a default
//! organ. The vocabulary pools feed synthetic report generation, counterfactual
//! edits and multiple-choice distractors.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use serde::Deserialize;

use crate::text::normalize_phrase;
use crate::units::Organ;

#[derive(Debug, Clone, Deserialize)]
pub struct EntityEntry {
    pub name: String,
    pub organ: Option<Organ>,
    pub synonyms: Vec<String>,
}

#[derive(Debug)]
pub struct Lexicon {
    version: u32,
    entries: Vec<EntityEntry>,
    /// normalized surface form -> entry index
    forms: HashMap<String, usize>,
    /// surface forms as token lists, longest first
    patterns: Vec<(Vec<String>, usize)>,
}

/// A lexicon hit inside a token sequence, `[start, end)` in token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub entry: usize,
}

impl Lexicon {
    fn from_json(doc: &str) -> Lexicon {
        #[derive(Deserialize)]
        struct File {
            version: u32,
            entities: Vec<EntityEntry>,
        }
        let file: File = serde_json::from_str(doc).expect("bundled lexicon is valid");
        let mut forms = HashMap::new();
        let mut patterns = Vec::new();
        for (idx, entry) in file.entities.iter().enumerate() {
            for form in std::iter::once(&entry.name).chain(entry.synonyms.iter()) {
                let norm = normalize_phrase(form);
                if let Some(prev) = forms.insert(norm.clone(), idx) {
                    assert_eq!(prev, idx, "surface form {form:?} claimed by two entities");
                }
                patterns.push((norm.split(' ').map(str::to_string).collect::<Vec<_>>(), idx));
            }
        }
        patterns.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Lexicon {
            version: file.version,
            entries: file.entities,
            forms,
            patterns,
        }
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn entries(&self) -> &[EntityEntry] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &EntityEntry {
        &self.entries[idx]
    }

    /// Canonical names of every entity, in lexicon order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn lookup(&self, name: &str) -> Option<&EntityEntry> {
        self.forms.get(&normalize_phrase(name)).map(|&i| &self.entries[i])
    }

    /// Matching key for an abnormality name: the normalized canonical name
    /// when the name is a known surface form, else the normalized input.
    pub fn match_key(&self, name: &str) -> String {
        let norm = normalize_phrase(name);
        match self.forms.get(&norm) {
            Some(&i) => normalize_phrase(&self.entries[i].name),
            None => norm,
        }
    }

    /// Left-to-right, longest-first, non-overlapping lexicon hits over
    /// normalized word tokens.
    pub fn find_mentions(&self, words: &[String]) -> Vec<Mention> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let hit = self.patterns.iter().find(|(pat, _)| {
                i + pat.len() <= words.len() && words[i..i + pat.len()].iter().zip(pat).all(|(w, p)| w == p)
            });
            match hit {
                Some((pat, entry)) => {
                    out.push(Mention {
                        start: i,
                        end: i + pat.len(),
                        entry: *entry,
                    });
                    i += pat.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

pub fn lexicon() -> &'static Lexicon {
    static LEXICON: OnceLock<Lexicon> = OnceLock::new();
    LEXICON.get_or_init(|| Lexicon::from_json(include_str!("../data/lexicon.json")))
}

/// Location and attribute phrase pools.
#[derive(Debug, Deserialize)]
pub struct Vocabulary {
    pub version: u32,
    pub locations: BTreeMap<Organ, Vec<String>>,
    pub attributes: Vec<String>,
}

impl Vocabulary {
    pub fn locations_for(&self, organ: Organ) -> &[String] {
        self.locations
            .get(&organ)
            .or_else(|| self.locations.get(&Organ::Other))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Every location phrase across organs, deduplicated, stable order.
    pub fn all_locations(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for list in self.locations.values() {
            for loc in list {
                if !out.contains(loc) {
                    out.push(loc.clone());
                }
            }
        }
        out
    }
}

pub fn vocabulary() -> &'static Vocabulary {
    static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
    VOCAB.get_or_init(|| serde_json::from_str(include_str!("../data/vocab.json")).expect("bundled vocabulary is valid"))
}
