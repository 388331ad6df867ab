//! Deterministic report text from a decomposition.
//!
//! The canonical form writes one sentence per unit,
//! `In the {location}, {attributes} {name} is noted.`, dropping empty fields.
//! [`Phrasing::Varied`] draws per-sentence templates and a sentence order from
//! a seed, producing rewordings with identical clinical content.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::units::{AbnormalityUnit, ReportDecomposition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phrasing {
    Canonical,
    /// Seeded template choice per sentence plus a seeded sentence order.
    Varied(u64),
}

const TEMPLATES: usize = 5;

fn sentence(unit: &AbnormalityUnit, template: usize) -> String {
    let loc = unit.location.trim();
    let attr = unit.attributes.trim();
    let phrase = if attr.is_empty() {
        unit.name.clone()
    } else {
        format!("{attr} {}", unit.name)
    };
    let body = match (template, loc.is_empty()) {
        (0, false) => format!("In the {loc}, {phrase} is noted"),
        (0, true) => format!("{phrase} is noted"),
        (1, false) => format!("{phrase} is seen in the {loc}"),
        (1, true) => format!("{phrase} is seen"),
        (2, false) => format!("There is {phrase} in the {loc}"),
        (2, true) => format!("There is {phrase}"),
        (3, false) => format!("In the {loc}, there is {phrase}"),
        (3, true) => format!("There is evidence of {phrase}"),
        (_, false) => format!("Findings include {phrase} in the {loc}"),
        (_, true) => format!("Findings include {phrase}"),
    };
    let mut chars = body.chars();
    match chars.next() {
        Some(first) => format!("{}{}.", first.to_uppercase(), chars.as_str()),
        None => String::new(),
    }
}

/// Renders one unit with the canonical template.
pub fn render_unit(unit: &AbnormalityUnit) -> String {
    sentence(unit, 0)
}

pub fn render_report(report: &ReportDecomposition, phrasing: Phrasing) -> String {
    match phrasing {
        Phrasing::Canonical => report
            .abnormalities
            .iter()
            .map(render_unit)
            .collect::<Vec<_>>()
            .join(" "),
        Phrasing::Varied(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sentences: Vec<String> = report
                .abnormalities
                .iter()
                .map(|u| sentence(u, rng.gen_range(0..TEMPLATES)))
                .collect();
            sentences.shuffle(&mut rng);
            sentences.join(" ")
        }
    }
}
