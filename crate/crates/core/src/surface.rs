//! Surface-similarity metrics and ingestion of externally computed scores.
//!
//! BLEU and ROUGE-L share the tokenizer in [`crate::text::surface_tokens`].

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::surface_tokens;

/// Floor applied to each n-gram precision before taking logs.
pub const BLEU_PRECISION_FLOOR: f64 = 1e-9;
pub const ROUGE_L_BETA: f64 = 1.2;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("max_n must be in 1..=4, got {0}")]
    BadOrder(usize),
    #[error("duplicate score for ({case_id}, {metric})")]
    DuplicateKey { case_id: String, metric: String },
    #[error("line {line}: bad score {value:?}")]
    BadNumber { line: usize, value: String },
    #[error("score table: {0}")]
    Csv(#[from] csv::Error),
    #[error("score table: {0}")]
    Io(#[from] std::io::Error),
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU over pre-tokenized input: geometric mean of clipped n-gram
/// precisions for `n = 1..=max_n`, times the brevity penalty.
pub fn bleu(candidate: &[String], reference: &[String], max_n: usize) -> Result<f64, SurfaceError> {
    if !(1..=4).contains(&max_n) {
        return Err(SurfaceError::BadOrder(max_n));
    }
    if reference.is_empty() {
        return Err(SurfaceError::EmptyReference);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let clipped: usize = cand
            .iter()
            .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if total == 0 { 0.0 } else { clipped as f64 / total as f64 };
        log_sum += p.max(BLEU_PRECISION_FLOOR).ln();
    }
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok((bp * (log_sum / max_n as f64).exp()).min(1.0))
}

pub fn bleu_text(candidate: &str, reference: &str, max_n: usize) -> Result<f64, SurfaceError> {
    bleu(&surface_tokens(candidate), &surface_tokens(reference), max_n)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L precision, recall and F-measure with recall weighted by `beta`.
pub fn rouge_l_parts(candidate: &[String], reference: &[String], beta: f64) -> Result<(f64, f64, f64), SurfaceError> {
    if reference.is_empty() {
        return Err(SurfaceError::EmptyReference);
    }
    if candidate.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let lcs = lcs_len(candidate, reference) as f64;
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    if lcs == 0.0 {
        return Ok((p, r, 0.0));
    }
    let b2 = beta * beta;
    Ok((p, r, (1.0 + b2) * p * r / (r + b2 * p)))
}

pub fn rouge_l(candidate: &[String], reference: &[String]) -> Result<f64, SurfaceError> {
    rouge_l_parts(candidate, reference, ROUGE_L_BETA).map(|(_, _, f)| f)
}

pub fn rouge_l_text(candidate: &str, reference: &str) -> Result<f64, SurfaceError> {
    rouge_l(&surface_tokens(candidate), &surface_tokens(reference))
}

/// Scores keyed by `(case_id, metric)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    rows: BTreeMap<(String, String), f64>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, case_id: &str, metric: &str, score: f64) -> Result<(), SurfaceError> {
        if !score.is_finite() {
            return Err(SurfaceError::BadNumber {
                line: 0,
                value: score.to_string(),
            });
        }
        let key = (case_id.to_string(), metric.to_string());
        if self.rows.contains_key(&key) {
            return Err(SurfaceError::DuplicateKey {
                case_id: key.0,
                metric: key.1,
            });
        }
        self.rows.insert(key, score);
        Ok(())
    }

    pub fn get(&self, case_id: &str, metric: &str) -> Option<f64> {
        self.rows.get(&(case_id.to_string(), metric.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct case ids, sorted.
    pub fn case_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.keys().map(|(c, _)| c.clone()).collect();
        ids.dedup();
        ids
    }

    /// Distinct metric names in first-seen order of the sorted rows.
    pub fn metrics(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, m) in self.rows.keys() {
            if !out.contains(m) {
                out.push(m.clone());
            }
        }
        out.sort();
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.rows.iter().map(|((c, m), v)| (c.as_str(), m.as_str(), *v))
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, SurfaceError> {
        #[derive(Deserialize)]
        struct Row {
            case_id: String,
            metric: String,
            score: String,
        }
        let mut table = ScoreTable::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row?;
            let line = i + 2;
            let score: f64 = row.score.parse().map_err(|_| SurfaceError::BadNumber {
                line,
                value: row.score.clone(),
            })?;
            if !score.is_finite() {
                return Err(SurfaceError::BadNumber { line, value: row.score });
            }
            table.insert(&row.case_id, &row.metric, score)?;
        }
        Ok(table)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("case_id,metric,score\n");
        for (c, m, v) in self.iter() {
            out.push_str(&format!("{c},{m},{v}\n"));
        }
        out
    }
}

/// Reads a `case_id,metric,score` CSV file.
pub fn load_external_scores(path: &Path) -> Result<ScoreTable, SurfaceError> {
    ScoreTable::from_reader(std::fs::File::open(path)?)
}
