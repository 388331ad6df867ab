//! Templated multiple-choice items built from abnormality units, negative
//! name sampling and per-subtask scoring.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{from_json_str, SchemaError};
use crate::lexicon::lexicon;
use crate::matching::{attributes_match, names_match};
use crate::text::normalize_phrase;
use crate::units::AbnormalityUnit;

pub const LETTERS: [&str; 4] = ["A", "B", "C", "D"];
pub const FORBIDDEN_WORDS: [&str; 3] = ["report", "findings", "impression"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemType {
    ExistencePositive,
    ExistenceNegative,
    Location,
    Attribute,
}

impl ItemType {
    pub fn subtask(self) -> Subtask {
        match self {
            ItemType::ExistencePositive | ItemType::ExistenceNegative => Subtask::Existence,
            ItemType::Location => Subtask::Location,
            ItemType::Attribute => Subtask::Attribute,
        }
    }

    fn option_count(self) -> usize {
        match self.subtask() {
            Subtask::Existence => 2,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtask {
    Existence,
    Location,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqItem {
    #[serde(rename = "type")]
    pub item_type: ItemType,
    pub question: String,
    /// Lettered options, `"A. Yes"`.
    pub options: Vec<String>,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqSet {
    pub items: Vec<McqItem>,
}

#[derive(Debug, Error)]
pub enum McqError {
    #[error("{kind} pool has {available} usable entries; need 3")]
    PoolTooSmall { kind: &'static str, available: usize },
    #[error("negative name {0:?} names the target abnormality")]
    NegativeIsPositive(String),
    #[error("no candidate name is absent from the case")]
    NoNegativeAvailable,
    #[error("no prediction for item {0:?}")]
    MissingPrediction(String),
    #[error("no items to score")]
    Empty,
    #[error(transparent)]
    Invalid(#[from] SchemaError),
}

fn option_text(option: &str) -> &str {
    option.split_once(". ").map(|(_, t)| t).unwrap_or(option)
}

fn letter_index(letter: &str) -> Option<usize> {
    LETTERS.iter().position(|l| *l == letter)
}

impl McqItem {
    /// The text of the keyed option, without its letter.
    pub fn answer_text(&self) -> Option<&str> {
        letter_index(&self.answer)
            .and_then(|i| self.options.get(i))
            .map(|o| option_text(o))
    }

    pub fn answer_position(&self) -> Option<usize> {
        letter_index(&self.answer)
    }

    /// Checks option count and lettering, the answer key, existence answers
    /// and forbidden question words. `path` prefixes error locations.
    pub fn validate_at(&self, path: &str) -> Result<(), SchemaError> {
        let want = self.item_type.option_count();
        if self.options.len() != want {
            return Err(SchemaError::violation(
                format!("{path}.options"),
                format!("expected {want} options, got {}", self.options.len()),
            ));
        }
        for (i, opt) in self.options.iter().enumerate() {
            let prefix = format!("{}. ", LETTERS[i]);
            if !opt.starts_with(&prefix) || opt.len() == prefix.len() {
                return Err(SchemaError::violation(
                    format!("{path}.options[{i}]"),
                    format!("must start with {prefix:?} followed by text"),
                ));
            }
        }
        let texts: Vec<String> = self.options.iter().map(|o| normalize_phrase(option_text(o))).collect();
        for i in 0..texts.len() {
            if texts[i + 1..].contains(&texts[i]) {
                return Err(SchemaError::violation(format!("{path}.options"), "options must be distinct"));
            }
        }
        let pos = match letter_index(&self.answer) {
            Some(p) if p < want => p,
            _ => {
                return Err(SchemaError::violation(
                    format!("{path}.answer"),
                    format!("must be one of {:?}", &LETTERS[..want]),
                ))
            }
        };
        if self.item_type.subtask() == Subtask::Existence {
            let mut yes_no: Vec<&str> = texts.iter().map(String::as_str).collect();
            yes_no.sort();
            if yes_no != ["no", "yes"] {
                return Err(SchemaError::violation(format!("{path}.options"), "existence options are Yes and No"));
            }
            let expected = if self.item_type == ItemType::ExistencePositive { "yes" } else { "no" };
            if texts[pos] != expected {
                return Err(SchemaError::violation(
                    format!("{path}.answer"),
                    format!("{:?} items are keyed {expected:?}", self.item_type),
                ));
            }
        }
        let q = self.question.to_lowercase();
        if let Some(word) = FORBIDDEN_WORDS.iter().find(|w| q.contains(*w)) {
            return Err(SchemaError::violation(
                format!("{path}.question"),
                format!("must not contain {word:?}"),
            ));
        }
        if self.question.trim().is_empty() {
            return Err(SchemaError::violation(format!("{path}.question"), "must be non-empty"));
        }
        Ok(())
    }
}

impl McqSet {
    /// Item invariants plus set composition: one of each existence type, at
    /// most one location and one attribute item, and no question that
    /// contains the keyed text of a location or attribute sibling.
    pub fn validate(&self) -> Result<(), SchemaError> {
        for (i, item) in self.items.iter().enumerate() {
            item.validate_at(&format!("items[{i}]"))?;
        }
        let count = |t: ItemType| self.items.iter().filter(|i| i.item_type == t).count();
        for (t, lo, hi) in [
            (ItemType::ExistencePositive, 1, 1),
            (ItemType::ExistenceNegative, 1, 1),
            (ItemType::Location, 0, 1),
            (ItemType::Attribute, 0, 1),
        ] {
            let n = count(t);
            if n < lo || n > hi {
                return Err(SchemaError::violation("items", format!("{n} items of type {t:?}")));
            }
        }
        for (i, item) in self.items.iter().enumerate() {
            let q = normalize_phrase(&item.question);
            for sibling in &self.items {
                if sibling.item_type.subtask() == Subtask::Existence {
                    continue;
                }
                if let Some(ans) = sibling.answer_text() {
                    let ans = normalize_phrase(ans);
                    if !ans.is_empty() && format!(" {q} ").contains(&format!(" {ans} ")) {
                        return Err(SchemaError::violation(
                            format!("items[{i}].question"),
                            "reveals the answer of another item",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mcq set serializes")
    }
}

pub fn parse_mcq_set(doc: &str) -> Result<McqSet, SchemaError> {
    let set: McqSet = from_json_str(doc)?;
    set.validate()?;
    Ok(set)
}

fn lettered(options: &[String]) -> Vec<String> {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {o}", LETTERS[i]))
        .collect()
}

/// Places `correct` at a seeded position among `distractors`.
fn keyed_options(correct: &str, distractors: &[String], rng: &mut ChaCha8Rng) -> (Vec<String>, String) {
    let pos = rng.gen_range(0..=distractors.len());
    let mut opts: Vec<String> = distractors.to_vec();
    opts.insert(pos, correct.to_string());
    (lettered(&opts), LETTERS[pos].to_string())
}

fn existence_item(item_type: ItemType, question: String, rng: &mut ChaCha8Rng) -> McqItem {
    let yes_first = rng.gen_bool(0.5);
    let opts: Vec<String> = if yes_first { vec!["Yes".into(), "No".into()] } else { vec!["No".into(), "Yes".into()] };
    let keyed = if item_type == ItemType::ExistencePositive { "Yes" } else { "No" };
    let pos = opts.iter().position(|o| o == keyed).expect("both present");
    McqItem {
        item_type,
        question,
        options: lettered(&opts),
        answer: LETTERS[pos].to_string(),
    }
}

fn pick_distractors(
    kind: &'static str,
    truth: &str,
    pool: &[String],
    same: impl Fn(&str, &str) -> bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>, McqError> {
    let mut usable: Vec<&String> = Vec::new();
    for cand in pool {
        let fresh = !usable.iter().any(|u| normalize_phrase(u) == normalize_phrase(cand));
        if fresh && !cand.trim().is_empty() && !same(truth, cand) {
            usable.push(cand);
        }
    }
    if usable.len() < 3 {
        return Err(McqError::PoolTooSmall {
            kind,
            available: usable.len(),
        });
    }
    Ok(usable.choose_multiple(rng, 3).map(|s| s.to_string()).collect())
}

fn same_location(a: &str, b: &str) -> bool {
    normalize_phrase(a) == normalize_phrase(b) || crate::matching::locations_match(a, b) || crate::matching::locations_match(b, a)
}

/// Items for one unit: the existence pair always, a location item when the
/// unit has a location and an attribute item when it has attributes.
pub fn build_mcq(
    unit: &AbnormalityUnit,
    negative_name: &str,
    distractor_locations: &[String],
    distractor_attributes: &[String],
    seed: u64,
) -> Result<McqSet, McqError> {
    if names_match(&unit.name, negative_name) {
        return Err(McqError::NegativeIsPositive(negative_name.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = unit.name.trim();
    let mut items = vec![
        existence_item(
            ItemType::ExistencePositive,
            format!("On this chest CT, can {name} be identified?"),
            &mut rng,
        ),
        existence_item(
            ItemType::ExistenceNegative,
            format!("On this chest CT, is {} present?", negative_name.trim()),
            &mut rng,
        ),
    ];
    let location = unit.location.trim();
    if !location.is_empty() {
        let d = pick_distractors("location", location, distractor_locations, same_location, &mut rng)?;
        let (options, answer) = keyed_options(location, &d, &mut rng);
        items.push(McqItem {
            item_type: ItemType::Location,
            question: format!("On this chest CT, which region contains the {name}?"),
            options,
            answer,
        });
    }
    let attributes = unit.attributes.trim();
    if !attributes.is_empty() {
        let d = pick_distractors("attribute", attributes, distractor_attributes, attributes_match, &mut rng)?;
        let (options, answer) = keyed_options(attributes, &d, &mut rng);
        items.push(McqItem {
            item_type: ItemType::Attribute,
            question: format!("On this chest CT, which description fits the appearance of the {name}?"),
            options,
            answer,
        });
    }
    let set = McqSet { items };
    set.validate()?;
    Ok(set)
}

/// Uniform seeded draw from the names in `corpus_names` that are absent from
/// the case after normalization.
pub fn sample_negative_name(case_units: &[AbnormalityUnit], corpus_names: &[String], seed: u64) -> Result<String, McqError> {
    let lx = lexicon();
    let present: Vec<String> = case_units.iter().map(|u| lx.match_key(&u.name)).collect();
    let mut seen: Vec<String> = Vec::new();
    let mut absent: Vec<&String> = Vec::new();
    for name in corpus_names {
        let key = lx.match_key(name);
        if key.is_empty() || present.contains(&key) || seen.contains(&key) {
            continue;
        }
        seen.push(key);
        absent.push(name);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    absent.choose(&mut rng).map(|s| s.to_string()).ok_or(McqError::NoNegativeAvailable)
}

/// One item in corpus form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqRecord {
    pub case_id: String,
    pub item_id: String,
    #[serde(flatten)]
    pub item: McqItem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqScores {
    /// `None` when the subtask has no items.
    pub existence: Option<f64>,
    pub location: Option<f64>,
    pub attribute: Option<f64>,
    /// Unweighted mean over the subtasks that have items.
    pub average: f64,
    pub counts: BTreeMap<Subtask, usize>,
}

fn normalize_letter(pred: &str) -> String {
    pred.trim()
        .chars()
        .next()
        .map(|c| c.to_ascii_uppercase().to_string())
        .unwrap_or_default()
}

pub fn score_mcq(items: &[McqRecord], predictions: &HashMap<String, String>) -> Result<McqScores, McqError> {
    if items.is_empty() {
        return Err(McqError::Empty);
    }
    let mut tally: BTreeMap<Subtask, (usize, usize)> = BTreeMap::new();
    for rec in items {
        let pred = predictions
            .get(&rec.item_id)
            .ok_or_else(|| McqError::MissingPrediction(rec.item_id.clone()))?;
        let e = tally.entry(rec.item.item_type.subtask()).or_default();
        e.0 += 1;
        e.1 += (normalize_letter(pred) == rec.item.answer) as usize;
    }
    let acc = |s: Subtask| tally.get(&s).map(|(n, c)| *c as f64 / *n as f64);
    let present: Vec<f64> = [Subtask::Existence, Subtask::Location, Subtask::Attribute]
        .into_iter()
        .filter_map(acc)
        .collect();
    Ok(McqScores {
        existence: acc(Subtask::Existence),
        location: acc(Subtask::Location),
        attribute: acc(Subtask::Attribute),
        average: present.iter().sum::<f64>() / present.len() as f64,
        counts: tally.iter().map(|(k, (n, _))| (*k, *n)).collect(),
    })
}

/// Corpus records for one case's units, with item ids `{case_id}-{unit}-{item}`.
pub fn build_case_items(
    case_id: &str,
    units: &[AbnormalityUnit],
    corpus_names: &[String],
    locations: &[String],
    attributes: &[String],
    seed: u64,
) -> Result<Vec<McqRecord>, McqError> {
    let mut out = Vec::new();
    for (u, unit) in units.iter().enumerate() {
        let unit_seed = seed.wrapping_mul(1_000_003).wrapping_add(u as u64);
        let negative = sample_negative_name(units, corpus_names, unit_seed)?;
        let set = build_mcq(unit, &negative, locations, attributes, unit_seed)?;
        for (i, item) in set.items.into_iter().enumerate() {
            out.push(McqRecord {
                case_id: case_id.to_string(),
                item_id: format!("{case_id}-{u}-{i}"),
                item,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::vocabulary;
    use crate::units::Organ;

    fn pools() -> (Vec<String>, Vec<String>) {
        (vocabulary().all_locations(), vocabulary().attributes.clone())
    }

    #[test]
    fn item_counts_follow_unit_fields() {
        let (locs, attrs) = pools();
        let full = AbnormalityUnit::new("nodule", Organ::Lung)
            .with_location("right upper lobe")
            .with_attributes("spiculated");
        assert_eq!(build_mcq(&full, "ascites", &locs, &attrs, 1).unwrap().items.len(), 4);
        let bare = AbnormalityUnit::new("nodule", Organ::Lung);
        let set = build_mcq(&bare, "ascites", &locs, &attrs, 1).unwrap();
        assert_eq!(set.items.len(), 2);
        assert_eq!(set.items[0].answer_text(), Some("Yes"));
        assert_eq!(set.items[1].answer_text(), Some("No"));
    }

    #[test]
    fn errors() {
        let (locs, _) = pools();
        let unit = AbnormalityUnit::new("nodule", Organ::Lung).with_attributes("solid");
        assert!(matches!(
            build_mcq(&unit, "nodules", &locs, &[], 0),
            Err(McqError::NegativeIsPositive(_))
        ));
        assert!(matches!(
            build_mcq(&unit, "ascites", &locs, &["solid".into(), "cystic".into()], 0),
            Err(McqError::PoolTooSmall { kind: "attribute", .. })
        ));
    }

    #[test]
    fn negative_sampling() {
        let case = vec![AbnormalityUnit::new("nodule", Organ::Lung)];
        let pool = vec!["nodule".to_string(), "effusion".to_string()];
        assert_eq!(sample_negative_name(&case, &pool, 3).unwrap(), "effusion");
        assert!(matches!(
            sample_negative_name(&case, &["Nodules".into()], 3),
            Err(McqError::NoNegativeAvailable)
        ));
        let big: Vec<String> = lexicon().names().map(str::to_string).collect();
        assert_eq!(sample_negative_name(&case, &big, 11).unwrap(), sample_negative_name(&case, &big, 11).unwrap());
    }

    #[test]
    fn validation_rejects_bad_items() {
        let ok = McqItem {
            item_type: ItemType::ExistencePositive,
            question: "On this chest CT, is there a nodule?".into(),
            options: vec!["A. No".into(), "B. Yes".into()],
            answer: "B".into(),
        };
        ok.validate_at("i").unwrap();
        let mut bad = ok.clone();
        bad.answer = "A".into();
        assert!(bad.validate_at("i").is_err());
        let mut bad = ok.clone();
        bad.question = "Does the REPORT mention a nodule?".into();
        assert_eq!(bad.validate_at("i").unwrap_err().path(), "i.question");
        let mut bad = ok;
        bad.options.push("C. Maybe".into());
        assert!(bad.validate_at("i").is_err());
    }

    fn rec(id: &str, t: ItemType, answer: &str) -> McqRecord {
        let options = if t.subtask() == Subtask::Existence {
            vec!["A. Yes".into(), "B. No".into()]
        } else {
            vec!["A. w".into(), "B. x".into(), "C. y".into(), "D. z".into()]
        };
        McqRecord {
            case_id: "c".into(),
            item_id: id.into(),
            item: McqItem {
                item_type: t,
                question: "q".into(),
                options,
                answer: answer.into(),
            },
        }
    }

    #[test]
    fn scoring() {
        let items = vec![
            rec("1", ItemType::ExistencePositive, "A"),
            rec("2", ItemType::ExistenceNegative, "B"),
            rec("3", ItemType::Location, "C"),
            rec("4", ItemType::Attribute, "D"),
        ];
        let preds: HashMap<String, String> =
            [("1", "A"), ("2", "b"), ("3", "A"), ("4", "D")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let s = score_mcq(&items, &preds).unwrap();
        assert_eq!((s.existence, s.location, s.attribute), (Some(1.0), Some(0.0), Some(1.0)));
        assert!((s.average - 2.0 / 3.0).abs() < 1e-12);

        let s = score_mcq(&items[..2], &preds).unwrap();
        assert_eq!(s.location, None);
        assert_eq!(s.average, 1.0);
        let mut partial = preds.clone();
        partial.remove("4");
        assert!(matches!(score_mcq(&items, &partial), Err(McqError::MissingPrediction(id)) if id == "4"));
    }

    #[test]
    fn json_shape() {
        let (locs, attrs) = pools();
        let unit = AbnormalityUnit::new("pleural effusion", Organ::Lung).with_location("left lower lobe");
        let set = build_mcq(&unit, "ascites", &locs, &attrs, 5).unwrap();
        let json = set.to_json();
        assert!(json.starts_with(r#"{"items":[{"type":"existence_positive","question":"#));
        assert_eq!(parse_mcq_set(&json).unwrap(), set);
        let rec = McqRecord {
            case_id: "c1".into(),
            item_id: "c1-0-0".into(),
            item: set.items[0].clone(),
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(serde_json::from_str::<McqRecord>(&line).unwrap(), rec);
    }
}
