//! Counterfactual variant pools, concordance with the perturbation ordering,
//! and Spearman correlation analysis across metrics.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{lexicon, vocabulary};
use crate::matching::{attributes_match, LexicalMatcher, Prediction};
use crate::metrics::{evaluate, MetricReport};
use crate::registry::Registry;
use crate::render::{render_report, render_unit, Phrasing};
use crate::surface::{self, ScoreTable, SurfaceError};
use crate::text::surface_tokens;
use crate::units::{AbnormalityUnit, Organ, ReportDecomposition};

pub const MAX_EDITS: usize = 5;

#[derive(Debug, Error)]
pub enum DivergenceError {
    #[error("cannot realize {requested} edits: {reason}")]
    InsufficientUnits { requested: usize, reason: String },
    #[error("edit count {0} exceeds {MAX_EDITS}")]
    TooManyEdits(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 items, got {0}")]
    TooFew(usize),
    #[error("text ranks must be distinct")]
    DuplicateRanks,
    #[error("zero variance input")]
    ZeroVariance,
    #[error("missing score for model {model:?}, metric {metric:?}")]
    MissingCell { model: String, metric: String },
    #[error("scoring failed: {0}")]
    Scoring(String),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Delete,
    Substitute,
    FlipLaterality,
    ReplaceAttribute,
    Inject,
}

/// Which edits the scheduler may draw for existing units. Injections are
/// always available when the unit count alone cannot absorb the requested
/// edits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditPolicy {
    /// Delete or substitute: every edit removes a matched entity.
    #[default]
    Factual,
    /// All five edit kinds, including location and attribute corruption.
    Full,
}

impl EditPolicy {
    fn unit_edits(self) -> &'static [EditKind] {
        match self {
            EditPolicy::Factual => &[EditKind::Delete, EditKind::Substitute],
            EditPolicy::Full => &[
                EditKind::Delete,
                EditKind::Substitute,
                EditKind::FlipLaterality,
                EditKind::ReplaceAttribute,
            ],
        }
    }
}

impl std::str::FromStr for EditPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "factual" => Ok(EditPolicy::Factual),
            "full" => Ok(EditPolicy::Full),
            other => Err(format!("unknown edit policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    /// Index into the base units; `None` for injections.
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub modification_count: usize,
    pub units: ReportDecomposition,
    pub rendered_text: String,
    pub seed_index: usize,
    pub edits: Vec<Edit>,
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn flip_laterality(location: &str) -> Option<String> {
    let mut changed = false;
    let words: Vec<String> = location
        .split(' ')
        .map(|w| {
            let lower = w.to_ascii_lowercase();
            let flipped = match lower.as_str() {
                "left" => "right",
                "right" => "left",
                "bilateral" => "left",
                _ => return w.to_string(),
            };
            changed = true;
            flipped.to_string()
        })
        .collect();
    changed.then(|| words.join(" "))
}

/// Distractor names for a base: the pool minus anything that names a base
/// entity, deduplicated by matching key.
fn usable_distractors(gt: &ReportDecomposition, distractors: &[String]) -> Vec<String> {
    let lx = lexicon();
    let taken: Vec<String> = gt.abnormalities.iter().map(|u| lx.match_key(&u.name)).collect();
    let mut keys: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for d in distractors {
        let key = lx.match_key(d);
        if !taken.contains(&key) && !keys.contains(&key) {
            keys.push(key);
            out.push(d.clone());
        }
    }
    out
}

fn distractor_unit(name: &str, rng: &mut ChaCha8Rng) -> AbnormalityUnit {
    let organ = lexicon().lookup(name).and_then(|e| e.organ).unwrap_or(Organ::Other);
    let mut unit = AbnormalityUnit::new(name, organ);
    if let Some(loc) = vocabulary().locations_for(organ).choose(rng) {
        unit.location = loc.clone();
    }
    unit.evidence = render_unit(&unit);
    unit
}

/// The full ordered edit schedule of [`MAX_EDITS`] edits for a base.
/// Variant `k` applies its first `k` edits, so variants are nested.
///
/// Injections come first: with fewer than five units the schedule needs
/// `5 - K` of them, and placing them before unit edits keeps at least one
/// matched unit alive until the last step.
pub fn edit_schedule(gt: &ReportDecomposition, seed: u64, policy: EditPolicy) -> Vec<Edit> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1));
    let k = gt.len();
    let on_units = k.min(MAX_EDITS);
    let mut schedule: Vec<Edit> = (0..MAX_EDITS - on_units)
        .map(|_| Edit {
            kind: EditKind::Inject,
            target: None,
        })
        .collect();
    let mut targets: Vec<usize> = (0..k).collect();
    targets.shuffle(&mut rng);
    for &t in targets.iter().take(on_units) {
        let unit = &gt.abnormalities[t];
        let applicable: Vec<EditKind> = policy
            .unit_edits()
            .iter()
            .copied()
            .filter(|kind| match kind {
                EditKind::FlipLaterality => flip_laterality(&unit.location).is_some(),
                _ => true,
            })
            .collect();
        let kind = *applicable.choose(&mut rng).expect("delete is always applicable");
        schedule.push(Edit { kind, target: Some(t) });
    }
    schedule
}

/// Applies the first `k` scheduled edits to `gt`.
pub fn perturb(
    gt: &ReportDecomposition,
    k: usize,
    distractors: &[String],
    seed: u64,
    policy: EditPolicy,
) -> Result<Variant, DivergenceError> {
    if k > MAX_EDITS {
        return Err(DivergenceError::TooManyEdits(k));
    }
    if k > 0 && gt.is_empty() {
        return Err(DivergenceError::InsufficientUnits {
            requested: k,
            reason: "base has no units".into(),
        });
    }
    let edits: Vec<Edit> = edit_schedule(gt, seed, policy).into_iter().take(k).collect();
    apply_edits(gt, &edits, distractors, seed)
}

/// Applies an explicit edit list. Distractor names and rendering are drawn
/// from `seed`.
pub fn apply_edits(
    gt: &ReportDecomposition,
    edits: &[Edit],
    distractors: &[String],
    seed: u64,
) -> Result<Variant, DivergenceError> {
    let k = edits.len();
    if k > MAX_EDITS {
        return Err(DivergenceError::TooManyEdits(k));
    }
    if let Some(bad) = edits.iter().find(|e| e.target.is_some_and(|t| t >= gt.len()) || (e.target.is_none() != (e.kind == EditKind::Inject))) {
        return Err(DivergenceError::InsufficientUnits {
            requested: k,
            reason: format!("edit {bad:?} does not fit a base of {} units", gt.len()),
        });
    }
    let needed = edits
        .iter()
        .filter(|e| matches!(e.kind, EditKind::Inject | EditKind::Substitute))
        .count();
    let pool = usable_distractors(gt, distractors);
    if pool.len() < needed {
        return Err(DivergenceError::InsufficientUnits {
            requested: k,
            reason: format!("need {needed} distinct distractor names, have {}", pool.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 2));
    let mut names: Vec<&String> = pool.choose_multiple(&mut rng, needed).collect();
    names.reverse();
    let attrs = &vocabulary().attributes;

    let mut slots: Vec<Option<AbnormalityUnit>> = gt.abnormalities.iter().cloned().map(Some).collect();
    let mut injected = Vec::new();
    for edit in edits {
        match (edit.kind, edit.target) {
            (EditKind::Inject, _) => {
                let name = names.pop().expect("counted above");
                injected.push(distractor_unit(name, &mut rng));
            }
            (EditKind::Delete, Some(t)) => slots[t] = None,
            (EditKind::Substitute, Some(t)) => {
                let name = names.pop().expect("counted above");
                if let Some(u) = slots[t].as_mut() {
                    u.name = name.clone();
                    if let Some(organ) = lexicon().lookup(name).and_then(|e| e.organ) {
                        u.organ = organ;
                    }
                    u.evidence = render_unit(u);
                }
            }
            (EditKind::FlipLaterality, Some(t)) => {
                if let Some(u) = slots[t].as_mut() {
                    u.location = flip_laterality(&u.location).expect("checked when scheduling");
                    u.evidence = render_unit(u);
                }
            }
            (EditKind::ReplaceAttribute, Some(t)) => {
                if let Some(u) = slots[t].as_mut() {
                    let mut order: Vec<&String> = attrs.iter().collect();
                    order.shuffle(&mut rng);
                    if let Some(new) = order.into_iter().find(|a| !attributes_match(&u.attributes, a)) {
                        u.attributes = new.clone();
                    }
                    u.evidence = render_unit(u);
                }
            }
            (_, None) => unreachable!("unit edits carry a target"),
        }
    }
    let units: Vec<AbnormalityUnit> = injected.into_iter().chain(slots.into_iter().flatten()).collect();
    let units = ReportDecomposition::new(units);
    let rendered_text = if k == 0 {
        render_report(&units, Phrasing::Canonical)
    } else {
        render_report(&units, Phrasing::Varied(mix(seed, 3 + k as u64)))
    };
    Ok(Variant {
        modification_count: k,
        units,
        rendered_text,
        seed_index: k,
        edits: edits.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantPool {
    pub base_id: String,
    pub base: ReportDecomposition,
    /// Canonical rendering of `base`, the reference for surface metrics.
    pub reference_text: String,
    pub variants: Vec<Variant>,
    pub text_ranks: Vec<usize>,
}

/// Rank 1 for the fewest modifications; ties broken by `seed_index`.
pub fn text_ranks(variants: &[Variant]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..variants.len()).collect();
    order.sort_by_key(|&i| (variants[i].modification_count, variants[i].seed_index));
    let mut ranks = vec![0; variants.len()];
    for (rank, i) in order.into_iter().enumerate() {
        ranks[i] = rank + 1;
    }
    ranks
}

/// Variants for `k = 0..=5` over one base.
pub fn build_pool(
    base_id: &str,
    base: &ReportDecomposition,
    distractors: &[String],
    seed: u64,
    policy: EditPolicy,
) -> Result<VariantPool, DivergenceError> {
    let variants = (0..=MAX_EDITS)
        .map(|k| perturb(base, k, distractors, seed, policy))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VariantPool {
        base_id: base_id.to_string(),
        base: base.clone(),
        reference_text: render_report(base, Phrasing::Canonical),
        text_ranks: text_ranks(&variants),
        variants,
    })
}

/// Every lexicon name, the default distractor pool.
pub fn default_distractors() -> Vec<String> {
    lexicon().names().map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceResult {
    pub phi: f64,
    pub concordant_pairs: f64,
    pub n: usize,
}

/// Fraction of pairs whose metric order agrees with the text order. Lower
/// text rank is better; higher metric score is better; metric ties count
/// half.
pub fn concordance(text_ranks: &[usize], metric_scores: &[f64]) -> Result<ConcordanceResult, DivergenceError> {
    if text_ranks.len() != metric_scores.len() {
        return Err(DivergenceError::LengthMismatch(text_ranks.len(), metric_scores.len()));
    }
    let n = text_ranks.len();
    if n < 2 {
        return Err(DivergenceError::TooFew(n));
    }
    let mut p = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (better, worse) = match text_ranks[i].cmp(&text_ranks[j]) {
                std::cmp::Ordering::Less => (i, j),
                std::cmp::Ordering::Greater => (j, i),
                std::cmp::Ordering::Equal => return Err(DivergenceError::DuplicateRanks),
            };
            let (a, b) = (metric_scores[better], metric_scores[worse]);
            if a > b {
                p += 1.0;
            } else if a == b {
                p += 0.5;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(ConcordanceResult {
        phi: p / pairs,
        concordant_pairs: p,
        n,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, DivergenceError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(DivergenceError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, DivergenceError> {
    if xs.len() != ys.len() {
        return Err(DivergenceError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(DivergenceError::TooFew(xs.len()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub metrics: Vec<String>,
    pub models: Vec<String>,
    pub rho: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.metrics.iter().position(|m| m == a)?;
        let j = self.metrics.iter().position(|m| m == b)?;
        Some(self.rho[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("metric,{}\n", self.metrics.join(","));
        for (name, row) in self.metrics.iter().zip(&self.rho) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }

    /// Mean off-diagonal rho within each suite and mean |rho| across suites.
    pub fn block_means(&self, suite_a: &[&str], suite_b: &[&str]) -> Option<BlockMeans> {
        let mut within = Vec::new();
        for suite in [suite_a, suite_b] {
            for (i, a) in suite.iter().enumerate() {
                for b in &suite[i + 1..] {
                    within.push(self.get(a, b)?);
                }
            }
        }
        let mut cross = Vec::new();
        for a in suite_a {
            for b in suite_b {
                cross.push(self.get(a, b)?.abs());
            }
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Some(BlockMeans {
            within: mean(&within),
            cross_abs: mean(&cross),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMeans {
    pub within: f64,
    pub cross_abs: f64,
}

/// Spearman rho between every pair of metrics, computed over models
/// (`case_id` in the table).
pub fn correlation_matrix(scores: &ScoreTable) -> Result<CorrelationMatrix, DivergenceError> {
    let models = scores.case_ids();
    let metrics = scores.metrics();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(metrics.len());
    for metric in &metrics {
        let col = models
            .iter()
            .map(|model| {
                scores.get(model, metric).ok_or_else(|| DivergenceError::MissingCell {
                    model: model.clone(),
                    metric: metric.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        columns.push(col);
    }
    let m = metrics.len();
    let mut rho = vec![vec![1.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let r = spearman(&columns[i], &columns[j])?;
            rho[i][j] = r;
            rho[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { metrics, models, rho })
}

/// Two-suite synthetic model scores: suite A metrics are increasing
/// transforms of a per-model latent `u` plus small noise, suite B the same
/// over an independent latent `v`.
pub fn two_latent_scores(models: usize, suite_a: &[&str], suite_b: &[&str], noise: f64, seed: u64) -> ScoreTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..models).map(|_| rng.gen::<f64>()).collect();
    let v: Vec<f64> = (0..models).map(|_| rng.gen::<f64>()).collect();
    let transforms: [fn(f64) -> f64; 4] = [|x| x, |x| x * x, f64::sqrt, |x| 1.0 / (1.0 + (-4.0 * (x - 0.5)).exp())];
    let mut table = ScoreTable::new();
    for (latent, suite) in [(&u, suite_a), (&v, suite_b)] {
        for (mi, metric) in suite.iter().enumerate() {
            let f = transforms[mi % transforms.len()];
            for (i, x) in latent.iter().enumerate() {
                let jitter = noise * (rng.gen::<f64>() * 2.0 - 1.0);
                table
                    .insert(&format!("model_{i:02}"), metric, f(*x) + jitter)
                    .expect("keys are unique by construction");
            }
        }
    }
    table
}

/// Scores one variant of a pool; higher is better.
pub trait VariantScorer: Send + Sync {
    fn score(&self, pool: &VariantPool, variant: &Variant) -> Result<f64, DivergenceError>;
}

pub type ScorerRegistry = Registry<dyn VariantScorer>;

/// One CABS score of the lexically matched rendered variant text against the
/// base units.
pub struct CabsScorer {
    pub score_name: &'static str,
}

impl CabsScorer {
    pub fn report(pool: &VariantPool, variant: &Variant) -> Result<MetricReport, DivergenceError> {
        let m = LexicalMatcher::default()
            .match_sync(&pool.base, &Prediction::Text(variant.rendered_text.clone()))
            .map_err(|e| DivergenceError::Scoring(e.to_string()))?;
        Ok(evaluate(&m, &pool.base))
    }
}

impl VariantScorer for CabsScorer {
    fn score(&self, pool: &VariantPool, variant: &Variant) -> Result<f64, DivergenceError> {
        let report = Self::report(pool, variant)?;
        report
            .score(self.score_name)
            .ok_or_else(|| DivergenceError::Scoring(format!("unknown score {}", self.score_name)))
    }
}

pub struct BleuScorer {
    pub max_n: usize,
}

impl VariantScorer for BleuScorer {
    fn score(&self, pool: &VariantPool, variant: &Variant) -> Result<f64, DivergenceError> {
        Ok(surface::bleu(
            &surface_tokens(&variant.rendered_text),
            &surface_tokens(&pool.reference_text),
            self.max_n,
        )?)
    }
}

pub struct RougeLScorer;

impl VariantScorer for RougeLScorer {
    fn score(&self, pool: &VariantPool, variant: &Variant) -> Result<f64, DivergenceError> {
        Ok(surface::rouge_l_text(&variant.rendered_text, &pool.reference_text)?)
    }
}

/// `cabs_<score>` for each CABS score, plus `bleu` and `rouge_l`.
pub fn builtin_scorers() -> ScorerRegistry {
    let mut reg = ScorerRegistry::new("scorer");
    for name in MetricReport::SCORE_NAMES {
        reg.register(&format!("cabs_{name}"), Arc::new(CabsScorer { score_name: name }));
    }
    reg.register("bleu", Arc::new(BleuScorer { max_n: 4 }));
    reg.register("rouge_l", Arc::new(RougeLScorer));
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolAnalysis {
    pub base_id: String,
    pub scores: BTreeMap<String, Vec<f64>>,
    pub phi: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceAnalysis {
    pub pools: Vec<PoolAnalysis>,
    pub mean_phi: BTreeMap<String, f64>,
}

impl DivergenceAnalysis {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("analysis serializes")
    }
}

pub fn analyze_pool(pool: &VariantPool, scorers: &[(String, Arc<dyn VariantScorer>)]) -> Result<PoolAnalysis, DivergenceError> {
    let mut scores = BTreeMap::new();
    let mut phi = BTreeMap::new();
    for (name, scorer) in scorers {
        let s = pool
            .variants
            .iter()
            .map(|v| scorer.score(pool, v))
            .collect::<Result<Vec<_>, _>>()?;
        phi.insert(name.clone(), concordance(&pool.text_ranks, &s)?.phi);
        scores.insert(name.clone(), s);
    }
    Ok(PoolAnalysis {
        base_id: pool.base_id.clone(),
        scores,
        phi,
    })
}

/// Per-pool concordance for each named scorer and the corpus mean.
pub fn analyze_pools(
    pools: &[VariantPool],
    registry: &ScorerRegistry,
    metric_names: &[&str],
) -> Result<DivergenceAnalysis, DivergenceError> {
    if pools.is_empty() {
        return Err(DivergenceError::TooFew(0));
    }
    let scorers = metric_names
        .iter()
        .map(|n| {
            registry
                .get(n)
                .map(|s| (n.to_string(), s))
                .map_err(|e| DivergenceError::Scoring(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let analyses = pools
        .iter()
        .map(|p| analyze_pool(p, &scorers))
        .collect::<Result<Vec<_>, _>>()?;
    let mut mean_phi = BTreeMap::new();
    for (name, _) in &scorers {
        let sum: f64 = analyses.iter().map(|a| a.phi[name]).sum();
        mean_phi.insert(name.clone(), sum / analyses.len() as f64);
    }
    Ok(DivergenceAnalysis {
        pools: analyses,
        mean_phi,
    })
}
