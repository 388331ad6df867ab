//! The CABS score suite: Entity Core, Clinical Fidelity and Organ Coverage.
//!
//! Every ratio is smoothed with [`EPSILON`] in its denominator, so empty sets
//! score 0 rather than NaN.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::MatchResult;
use crate::units::{Organ, ReportDecomposition};

/// Denominator smoothing shared by every score.
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub location_accuracy: f64,
    pub attribute_accuracy: f64,
    pub fully_consistent_accuracy: f64,
    pub or_rate: f64,
    pub fmor_rate: f64,
    pub hit_count: usize,
    pub fp_count: usize,
    pub gt_count: usize,
}

impl MetricReport {
    pub const SCORE_NAMES: [&'static str; 8] = [
        "precision",
        "recall",
        "f1",
        "location_accuracy",
        "attribute_accuracy",
        "fully_consistent_accuracy",
        "or_rate",
        "fmor_rate",
    ];

    pub fn scores(&self) -> [f64; 8] {
        [
            self.precision,
            self.recall,
            self.f1,
            self.location_accuracy,
            self.attribute_accuracy,
            self.fully_consistent_accuracy,
            self.or_rate,
            self.fmor_rate,
        ]
    }

    pub fn score(&self, name: &str) -> Option<f64> {
        Self::SCORE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.scores()[i])
    }

    fn from_scores(s: [f64; 8], hit_count: usize, fp_count: usize, gt_count: usize) -> Self {
        MetricReport {
            precision: s[0],
            recall: s[1],
            f1: s[2],
            location_accuracy: s[3],
            attribute_accuracy: s[4],
            fully_consistent_accuracy: s[5],
            or_rate: s[6],
            fmor_rate: s[7],
            hit_count,
            fp_count,
            gt_count,
        }
    }

    pub const CSV_HEADER: &'static str =
        "precision,recall,f1,location_accuracy,attribute_accuracy,fully_consistent_accuracy,or_rate,fmor_rate,hit_count,fp_count,gt_count";

    /// One CSV row in [`Self::CSV_HEADER`] column order.
    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.scores().iter().map(|v| v.to_string()).collect();
        cols.extend([self.hit_count, self.fp_count, self.gt_count].map(|c| c.to_string()));
        cols.join(",")
    }
}

/// Precision, recall and F1 from hit/miss/false-positive counts.
pub fn entity_core_counts(tp: usize, fn_: usize, fp: usize) -> (f64, f64, f64) {
    let tp = tp as f64;
    let precision = tp / (tp + fp as f64 + EPSILON);
    let recall = tp / (tp + fn_ as f64 + EPSILON);
    let f1 = 2.0 * precision * recall / (precision + recall + EPSILON);
    (precision, recall, f1)
}

pub fn entity_core(m: &MatchResult) -> (f64, f64, f64) {
    let tp = m.hits();
    entity_core_counts(tp, m.gt_count() - tp, m.fp())
}

/// Location, attribute and fully-consistent accuracy over hit units only.
pub fn clinical_fidelity(m: &MatchResult) -> (f64, f64, f64) {
    let hits: Vec<_> = m.judgments.iter().filter(|j| j.hit).collect();
    let denom = hits.len() as f64 + EPSILON;
    let loc = hits.iter().filter(|j| j.location_match).count() as f64;
    let attr = hits.iter().filter(|j| j.attribute_match).count() as f64;
    let both = hits.iter().filter(|j| j.location_match && j.attribute_match).count() as f64;
    (loc / denom, attr / denom, both / denom)
}

/// Macro-averaged per-organ hit rate and fully-matched rate.
///
/// Judgments are paired positionally with `gt.abnormalities`.
pub fn organ_coverage(m: &MatchResult, gt: &ReportDecomposition) -> (f64, f64) {
    debug_assert_eq!(m.judgments.len(), gt.len());
    // organ -> (units, hits, fully matched)
    let mut per_organ: BTreeMap<Organ, (usize, usize, usize)> = BTreeMap::new();
    for (unit, j) in gt.abnormalities.iter().zip(&m.judgments) {
        let e = per_organ.entry(unit.organ).or_default();
        e.0 += 1;
        e.1 += j.hit as usize;
        e.2 += j.fully_matched() as usize;
    }
    let organs = per_organ.len() as f64 + EPSILON;
    let or_sum: f64 = per_organ.values().map(|(n, h, _)| *h as f64 / (*n as f64 + EPSILON)).sum();
    let fm_sum: f64 = per_organ.values().map(|(n, _, f)| *f as f64 / (*n as f64 + EPSILON)).sum();
    (or_sum / organs, fm_sum / organs)
}

/// All scores for one case.
pub fn evaluate(m: &MatchResult, gt: &ReportDecomposition) -> MetricReport {
    let (p, r, f1) = entity_core(m);
    let (loc, attr, full) = clinical_fidelity(m);
    let (or, fmor) = organ_coverage(m, gt);
    MetricReport::from_scores([p, r, f1, loc, attr, full, or, fmor], m.hits(), m.fp(), m.gt_count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Mean of per-case scores.
    #[default]
    Macro,
    /// Entity Core recomputed from summed counts; the remaining scores stay
    /// macro-averaged.
    Micro,
}

impl std::str::FromStr for Averaging {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(Averaging::Macro),
            "micro" => Ok(Averaging::Micro),
            other => Err(format!("unknown averaging mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty corpus")]
    EmptyCorpus,
}

pub fn aggregate(per_case: &[MetricReport]) -> Result<MetricReport, MetricsError> {
    aggregate_with(per_case, Averaging::Macro)
}

pub fn aggregate_with(per_case: &[MetricReport], mode: Averaging) -> Result<MetricReport, MetricsError> {
    if per_case.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let n = per_case.len() as f64;
    let mut sums = [0.0; 8];
    for r in per_case {
        for (s, v) in sums.iter_mut().zip(r.scores()) {
            *s += v;
        }
    }
    let mut means = sums.map(|s| s / n);
    let hits: usize = per_case.iter().map(|r| r.hit_count).sum();
    let fps: usize = per_case.iter().map(|r| r.fp_count).sum();
    let gts: usize = per_case.iter().map(|r| r.gt_count).sum();
    if mode == Averaging::Micro {
        let (p, r, f1) = entity_core_counts(hits, gts - hits, fps);
        means[0] = p;
        means[1] = r;
        means[2] = f1;
    }
    Ok(MetricReport::from_scores(means, hits, fps, gts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::UnitJudgment;
    use crate::units::AbnormalityUnit;

    fn j(hit: bool, loc: bool, attr: bool) -> UnitJudgment {
        UnitJudgment {
            name: "x".into(),
            hit,
            location_match: loc,
            attribute_match: attr,
        }
    }

    fn mr(judgments: Vec<UnitJudgment>, fp: usize) -> MatchResult {
        let pred_count = judgments.iter().filter(|j| j.hit).count() + fp;
        MatchResult {
            judgments,
            false_positives: vec!["fp".into(); fp],
            pred_count,
        }
    }

    #[test]
    fn entity_core_examples() {
        let (p, r, f1) = entity_core(&mr(vec![j(true, true, true), j(true, false, false), j(false, false, false)], 1));
        for v in [p, r, f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-7, "{v}");
        }
        assert_eq!(entity_core(&mr(vec![], 0)), (0.0, 0.0, 0.0));
        let (p, r, f1) = entity_core(&mr(vec![j(true, true, true); 3], 0));
        for v in [p, r, f1] {
            assert!((1.0 - v).abs() < 1e-7 && v < 1.0);
        }
    }

    #[test]
    fn fidelity_examples() {
        let m = mr(vec![j(true, true, true), j(true, true, false), j(false, false, false)], 0);
        let (loc, attr, full) = clinical_fidelity(&m);
        assert!((loc - 1.0).abs() < 1e-7);
        assert!((attr - 0.5).abs() < 1e-7);
        assert!((full - 0.5).abs() < 1e-7);
        assert_eq!(clinical_fidelity(&mr(vec![j(false, false, false)], 0)), (0.0, 0.0, 0.0));
    }

    #[test]
    fn organ_coverage_example() {
        let gt = ReportDecomposition::new(vec![
            AbnormalityUnit::new("a", Organ::Lung),
            AbnormalityUnit::new("b", Organ::Lung),
            AbnormalityUnit::new("c", Organ::Liver),
        ]);
        let m = mr(vec![j(true, true, true), j(false, false, false), j(true, false, true)], 0);
        let (or, fmor) = organ_coverage(&m, &gt);
        assert!((or - 0.75).abs() < 1e-7, "{or}");
        assert!((fmor - 0.25).abs() < 1e-7, "{fmor}");
        assert_eq!(organ_coverage(&mr(vec![], 0), &ReportDecomposition::default()), (0.0, 0.0));
    }

    #[test]
    fn aggregation() {
        let ones = MetricReport::from_scores([1.0; 8], 1, 0, 1);
        let zeros = MetricReport::from_scores([0.0; 8], 0, 1, 1);
        let agg = aggregate(&[ones.clone(), zeros]).unwrap();
        assert!(agg.scores().iter().all(|v| *v == 0.5));
        assert_eq!((agg.hit_count, agg.fp_count, agg.gt_count), (1, 1, 2));
        assert_eq!(aggregate(&[ones.clone()]).unwrap(), ones);
        let f1s: Vec<MetricReport> = [0.2, 0.4, 0.9]
            .iter()
            .map(|f| {
                let mut r = ones.clone();
                r.f1 = *f;
                r
            })
            .collect();
        assert!((aggregate(&f1s).unwrap().f1 - 0.5).abs() < 1e-15);
        assert_eq!(aggregate(&[]), Err(MetricsError::EmptyCorpus));
    }

    #[test]
    fn micro_entity_core_uses_counts() {
        let a = evaluate(&mr(vec![j(true, true, true)], 0), &ReportDecomposition::new(vec![AbnormalityUnit::new("a", Organ::Lung)]));
        let b = evaluate(
            &mr(vec![j(false, false, false); 3], 3),
            &ReportDecomposition::new(vec![AbnormalityUnit::new("a", Organ::Lung); 3]),
        );
        let micro = aggregate_with(&[a.clone(), b.clone()], Averaging::Micro).unwrap();
        let (p, r, _) = entity_core_counts(1, 3, 3);
        assert_eq!((micro.precision, micro.recall), (p, r));
        let mac = aggregate_with(&[a, b], Averaging::Macro).unwrap();
        assert!((mac.recall - 0.5).abs() < 1e-7);
    }

    #[test]
    fn csv_row_has_every_column() {
        let r = MetricReport::from_scores([0.5; 8], 1, 2, 3);
        assert_eq!(r.csv_row().split(',').count(), MetricReport::CSV_HEADER.split(',').count());
        assert_eq!(r.score("or_rate"), Some(0.5));
    }
}
