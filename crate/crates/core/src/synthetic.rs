//! Seeded synthetic ground-truth decompositions drawn from the bundled
//! lexicon and vocabulary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lexicon::{lexicon, vocabulary};
use crate::render::render_unit;
use crate::units::{AbnormalityUnit, Certainty, Organ, ReportDecomposition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub min_units: usize,
    pub max_units: usize,
    /// Percent chance that a unit carries a location.
    pub location_pct: u32,
    /// Percent chance that a unit carries attributes.
    pub attribute_pct: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            min_units: 1,
            max_units: 6,
            location_pct: 85,
            attribute_pct: 70,
        }
    }
}

/// Lexicon entities with a fixed organ; these make unambiguous report units.
pub fn organ_specific_names() -> Vec<(&'static str, Organ)> {
    lexicon()
        .entries()
        .iter()
        .filter_map(|e| e.organ.map(|o| (e.name.as_str(), o)))
        .collect()
}

/// One unit for a named entity with seeded location, attributes and certainty.
pub fn synthetic_unit(name: &str, organ: Organ, rng: &mut impl Rng, cfg: &SyntheticConfig) -> AbnormalityUnit {
    let vocab = vocabulary();
    let mut unit = AbnormalityUnit::new(name, organ);
    let locations = vocab.locations_for(organ);
    if !locations.is_empty() && rng.gen_range(0..100) < cfg.location_pct {
        unit.location = locations.choose(rng).cloned().unwrap_or_default();
    }
    if rng.gen_range(0..100) < cfg.attribute_pct {
        let n = rng.gen_range(1..=2);
        let picks: Vec<&String> = vocab.attributes.choose_multiple(rng, n).collect();
        unit.attributes = picks.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
    }
    if rng.gen_bool(0.2) {
        unit.certainty = Certainty::Possible;
    }
    unit.evidence = render_unit(&unit);
    unit
}

/// A decomposition with distinct entity names, deterministic in `seed`.
pub fn synthetic_decomposition(seed: u64, cfg: &SyntheticConfig) -> ReportDecomposition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = organ_specific_names();
    let hi = cfg.max_units.min(names.len()).max(cfg.min_units);
    let k = rng.gen_range(cfg.min_units..=hi);
    let chosen: Vec<&(&str, Organ)> = names.choose_multiple(&mut rng, k).collect();
    ReportDecomposition::new(
        chosen
            .into_iter()
            .map(|(name, organ)| synthetic_unit(name, *organ, &mut rng, cfg))
            .collect(),
    )
}

/// `n` decompositions seeded `base_seed, base_seed + 1, ...`.
pub fn synthetic_corpus(n: usize, base_seed: u64, cfg: &SyntheticConfig) -> Vec<ReportDecomposition> {
    (0..n as u64)
        .map(|i| synthetic_decomposition(base_seed.wrapping_add(i), cfg))
        .collect()
}
