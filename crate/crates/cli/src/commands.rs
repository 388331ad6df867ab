use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cabs_core::corpus::{parse_cases, parse_jsonl, CaseRecord};
use cabs_core::divergence::{analyze_pools, build_pool, builtin_scorers, correlation_matrix, default_distractors, EditPolicy, VariantPool};
use cabs_core::error::SchemaError;
use cabs_core::extract::{builtin_extractors, extract_units, ExtractError, Extractor, RuleBasedExtractor};
use cabs_core::lexicon::vocabulary;
use cabs_core::matching::{builtin_matchers, match_reports, MatchError, Matcher, Prediction};
use cabs_core::mcq::{build_case_items, score_mcq, McqRecord};
use cabs_core::metrics::{aggregate_with, evaluate, Averaging, MetricReport};
use cabs_core::surface::ScoreTable;
use cabs_core::units::ReportDecomposition;
use cabs_llm::{LlmClient, LlmExtractor, LlmMatcher, ModelConfig, ResponseCache, LLM_BACKEND};
use cabs_service::api::ErrorCode;
use cabs_service::{parse_group_request, scorer_with_judge, ServiceConfig};
use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;
use crate::io::{is_csv, jsonl, read_input, write_output};
use crate::{Backend, InputOutput, RewardFlags};

fn usage(flag: &str, message: impl std::fmt::Display) -> Failure {
    Failure::usage(Some(flag), message.to_string())
}

fn line_path(i: usize) -> String {
    format!("line {}", i + 1)
}

fn model_config(model: Option<&String>, endpoint: Option<&String>) -> ModelConfig {
    let mut cfg = ModelConfig::default();
    if let Some(m) = model {
        cfg.model = m.clone();
    }
    if let Some(e) = endpoint {
        cfg.endpoint = e.clone();
    }
    cfg
}

fn judge_client(b: &Backend) -> Result<Arc<LlmClient>, Failure> {
    let cache = match &b.cache_dir {
        Some(dir) => ResponseCache::on_disk(dir).map_err(|e| Failure::validation(e).at("--cache-dir"))?,
        None => ResponseCache::in_memory(),
    };
    let cfg = model_config(b.model.as_ref(), b.endpoint.as_ref());
    LlmClient::http(cfg, cache).map(Arc::new).map_err(|e| usage("--model", e))
}

fn check_jobs(b: &Backend) -> Result<usize, Failure> {
    if b.jobs == 0 {
        return Err(usage("--jobs", "must be at least 1"));
    }
    Ok(b.jobs)
}

/// Matcher and the extractor paired with it for free-text ground truth.
fn strategies(b: &Backend) -> Result<(Arc<dyn Matcher>, Arc<dyn Extractor>), Failure> {
    let mut matchers = builtin_matchers();
    let mut extractors = builtin_extractors();
    let extractor_name = if b.matcher.eq_ignore_ascii_case(LLM_BACKEND) {
        let client = judge_client(b)?;
        matchers.register(LLM_BACKEND, Arc::new(LlmMatcher::new(client.clone())));
        extractors.register(LLM_BACKEND, Arc::new(LlmExtractor::new(client)));
        LLM_BACKEND
    } else {
        RuleBasedExtractor::NAME
    };
    let matcher = matchers.get(&b.matcher).map_err(|e| usage("--matcher", e))?;
    let extractor = extractors.get(extractor_name).map_err(|e| usage("--matcher", e))?;
    Ok((matcher, extractor))
}

fn extract_failure(path: String, e: ExtractError) -> Failure {
    match e {
        ExtractError::Backend(_) => Failure::backend(e).at(path),
        other => Failure::validation(other).at(path),
    }
}

fn match_failure(path: String, e: MatchError) -> Failure {
    match e {
        MatchError::Extraction(x) => extract_failure(path, x),
        other => Failure::backend(other).at(path),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportLine {
    case_id: String,
    report: String,
}

#[derive(Serialize)]
struct UnitsLine {
    case_id: String,
    units: ReportDecomposition,
}

pub async fn extract(io: &InputOutput, b: &Backend, extractor: &str) -> Result<(), Failure> {
    let jobs = check_jobs(b)?;
    let mut registry = builtin_extractors();
    if extractor.eq_ignore_ascii_case(LLM_BACKEND) {
        registry.register(LLM_BACKEND, Arc::new(LlmExtractor::new(judge_client(b)?)));
    }
    let ex = registry.get(extractor).map_err(|e| usage("--extractor", e))?;
    let lines: Vec<ReportLine> = parse_jsonl(&read_input(&io.input)?)?;
    let rows: Vec<UnitsLine> = stream::iter(lines.into_iter().enumerate())
        .map(|(i, line)| {
            let ex = ex.clone();
            async move {
                let units = extract_units(&line.report, ex.as_ref())
                    .await
                    .map_err(|e| extract_failure(format!("{}.report", line_path(i)), e))?;
                Ok::<_, Failure>(UnitsLine {
                    case_id: line.case_id,
                    units,
                })
            }
        })
        .buffered(jobs)
        .try_collect()
        .await?;
    write_output(io.output.as_deref(), &jsonl(&rows))
}

#[derive(Serialize)]
struct CaseMetrics {
    case_id: String,
    metrics: MetricReport,
}

#[derive(Serialize)]
struct EvalOutput {
    averaging: Averaging,
    matcher: String,
    aggregate: MetricReport,
    cases: Vec<CaseMetrics>,
}

async fn case_inputs(i: usize, case: &CaseRecord, extractor: &dyn Extractor) -> Result<(ReportDecomposition, Prediction), Failure> {
    let at = |field: &str| format!("{}.{field}", line_path(i));
    let gt = match (&case.gt_units, &case.gt_report) {
        (Some(units), _) => units.clone(),
        (None, Some(text)) => extract_units(text, extractor)
            .await
            .map_err(|e| extract_failure(at("gt_report"), e))?,
        (None, None) => return Err(Failure::schema(SchemaError::violation(at("gt_units"), "case needs gt_units or gt_report"))),
    };
    let pred = match (&case.pred_units, &case.pred_report) {
        (Some(units), _) => Prediction::Units(units.clone()),
        (None, Some(text)) => Prediction::Text(text.clone()),
        (None, None) => return Err(Failure::schema(SchemaError::violation(at("pred_units"), "case needs pred_units or pred_report"))),
    };
    Ok((gt, pred))
}

pub async fn eval(io: &InputOutput, b: &Backend, averaging: &str) -> Result<(), Failure> {
    let jobs = check_jobs(b)?;
    let mode: Averaging = averaging.parse().map_err(|e| usage("--averaging", e))?;
    let (matcher, extractor) = strategies(b)?;
    let cases = parse_cases(&read_input(&io.input)?)?;
    let per_case: Vec<CaseMetrics> = stream::iter(cases.into_iter().enumerate())
        .map(|(i, case)| {
            let (matcher, extractor) = (matcher.clone(), extractor.clone());
            async move {
                let (gt, pred) = case_inputs(i, &case, extractor.as_ref()).await?;
                let m = match_reports(&gt, &pred, matcher.as_ref())
                    .await
                    .map_err(|e| match_failure(line_path(i), e))?;
                Ok::<_, Failure>(CaseMetrics {
                    case_id: case.case_id,
                    metrics: evaluate(&m, &gt),
                })
            }
        })
        .buffered(jobs)
        .try_collect()
        .await?;
    let reports: Vec<MetricReport> = per_case.iter().map(|c| c.metrics.clone()).collect();
    let aggregate = aggregate_with(&reports, mode).map_err(Failure::validation)?;

    let body = if io.output.as_deref().is_some_and(is_csv) {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("case_id").chain(MetricReport::CSV_HEADER.split(',')).collect();
        w.write_record(&header).map_err(|e| Failure::internal(e.into()))?;
        for c in per_case.iter().map(|c| (c.case_id.as_str(), &c.metrics)).chain([("aggregate", &aggregate)]) {
            let row = c.1.csv_row();
            let record: Vec<&str> = std::iter::once(c.0).chain(row.split(',')).collect();
            w.write_record(&record).map_err(|e| Failure::internal(e.into()))?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Failure::internal(anyhow::anyhow!("{e}")))?).expect("csv is utf-8")
    } else {
        let out = EvalOutput {
            averaging: mode,
            matcher: matcher.name().to_string(),
            aggregate,
            cases: per_case,
        };
        format!("{}\n", serde_json::to_string_pretty(&out).expect("eval output serializes"))
    };
    write_output(io.output.as_deref(), &body)
}

fn service_config(r: &RewardFlags, judge: Option<ModelConfig>) -> Result<ServiceConfig, Failure> {
    let mut cfg = ServiceConfig::default();
    if let Some(a) = r.alpha {
        cfg.reward.alpha = a;
    }
    if let Some(g) = r.gamma {
        cfg.reward.gamma = g;
    }
    if let Some(c) = r.clip_eps {
        cfg.objective.clip_epsilon = c;
    }
    if let Some(b) = r.beta {
        cfg.objective.beta = b;
    }
    cfg.judge = judge;
    cfg.validate().map_err(|e| usage("--alpha/--gamma/--clip-eps/--beta", e))?;
    Ok(cfg)
}

pub async fn reward(io: &InputOutput, b: &Backend, r: &RewardFlags) -> Result<(), Failure> {
    let jobs = check_jobs(b)?;
    let judge = if b.matcher.eq_ignore_ascii_case(LLM_BACKEND) {
        Some(judge_client(b)?)
    } else {
        None
    };
    let cfg = service_config(r, judge.as_ref().map(|c| c.config().clone()))?;
    let scorer = scorer_with_judge(cfg, judge);
    let text = read_input(&io.input)?;
    let mut requests = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut req = parse_group_request(line.as_bytes()).map_err(|e| {
            let path = match e.path.as_deref() {
                Some(".") | None => line_path(i),
                Some(p) => format!("{}.{p}", line_path(i)),
            };
            Failure::validation(anyhow::anyhow!(e.message)).at(path)
        })?;
        if req.matcher == "lexical" {
            req.matcher = b.matcher.clone();
        }
        requests.push(req);
    }
    let responses: Vec<_> = stream::iter(requests.into_iter().enumerate())
        .map(|(i, req)| {
            let scorer = scorer.clone();
            async move {
                scorer.score(req).await.map_err(|e| {
                    let path = match &e.path {
                        Some(p) => format!("{}.{p}", line_path(i)),
                        None => line_path(i),
                    };
                    let err = anyhow::anyhow!("{}: {}", e.code.as_str(), e.message);
                    match e.code {
                        ErrorCode::BackendFailure | ErrorCode::Timeout => Failure::backend(err).at(path),
                        _ => Failure::validation(err).at(path),
                    }
                })
            }
        })
        .buffered(jobs)
        .try_collect()
        .await?;
    write_output(io.output.as_deref(), &jsonl(&responses))
}

pub fn perturb(io: &InputOutput, seed: u64, policy: &str) -> Result<(), Failure> {
    let policy: EditPolicy = policy.parse().map_err(|e| usage("--policy", e))?;
    let cases = parse_cases(&read_input(&io.input)?)?;
    let distractors = default_distractors();
    let mut pools = Vec::with_capacity(cases.len());
    for (i, case) in cases.iter().enumerate() {
        let gt = case
            .gt_units
            .as_ref()
            .ok_or_else(|| Failure::schema(SchemaError::violation(format!("{}.gt_units", line_path(i)), "required for perturbation")))?;
        let base_seed = seed.wrapping_add(i as u64);
        let pool = build_pool(&case.case_id, gt, &distractors, base_seed, policy)
            .map_err(|e| Failure::validation(e).at(format!("{}.gt_units", line_path(i))))?;
        pools.push(pool);
    }
    write_output(io.output.as_deref(), &jsonl(&pools))
}

pub fn analyze(io: &InputOutput, metrics: &[String]) -> Result<(), Failure> {
    let text = read_input(&io.input)?;
    if is_csv(&io.input) {
        let table = ScoreTable::from_reader(text.as_bytes()).map_err(Failure::validation)?;
        let matrix = correlation_matrix(&table).map_err(Failure::validation)?;
        return write_output(io.output.as_deref(), &matrix.to_csv());
    }
    let pools: Vec<VariantPool> = parse_jsonl(&text)?;
    let registry = builtin_scorers();
    let names: Vec<String> = if metrics.is_empty() { registry.names() } else { metrics.to_vec() };
    for n in &names {
        if !registry.contains(n) {
            return Err(usage("--metrics", registry.get(n).err().expect("missing name")));
        }
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let analysis = analyze_pools(&pools, &registry, &refs).map_err(Failure::validation)?;
    write_output(io.output.as_deref(), &format!("{}\n", analysis.to_json()))
}

pub fn mcq_generate(io: &InputOutput, seed: u64) -> Result<(), Failure> {
    let cases = parse_cases(&read_input(&io.input)?)?;
    let mut names: BTreeSet<String> = default_distractors().into_iter().collect();
    for c in &cases {
        if let Some(gt) = &c.gt_units {
            names.extend(gt.abnormalities.iter().map(|u| u.name.to_lowercase()));
        }
    }
    let names: Vec<String> = names.into_iter().collect();
    let vocab = vocabulary();
    let locations = vocab.all_locations();
    let mut records: Vec<McqRecord> = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        let gt = case
            .gt_units
            .as_ref()
            .ok_or_else(|| Failure::schema(SchemaError::violation(format!("{}.gt_units", line_path(i)), "required for MCQ generation")))?;
        let items = build_case_items(&case.case_id, &gt.abnormalities, &names, &locations, &vocab.attributes, seed.wrapping_add(i as u64))
            .map_err(|e| Failure::validation(e).at(format!("{}.gt_units", line_path(i))))?;
        records.extend(items);
    }
    write_output(io.output.as_deref(), &jsonl(&records))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerLine {
    item_id: String,
    answer: String,
}

pub fn mcq_score(io: &InputOutput, predictions: &Path) -> Result<(), Failure> {
    let items: Vec<McqRecord> = parse_jsonl(&read_input(&io.input)?)?;
    let answers: Vec<AnswerLine> = parse_jsonl(&read_input(predictions)?).map_err(|e| Failure::schema(e).at(format!("--predictions {}", predictions.display())))?;
    let map: HashMap<String, String> = answers.into_iter().map(|a| (a.item_id, a.answer)).collect();
    let scores = score_mcq(&items, &map).map_err(Failure::validation)?;
    write_output(io.output.as_deref(), &format!("{}\n", serde_json::to_string(&scores).expect("scores serialize")))
}

pub async fn serve(
    config: Option<PathBuf>,
    bind: Option<String>,
    model: Option<String>,
    endpoint: Option<String>,
    cache_dir: Option<PathBuf>,
    r: &RewardFlags,
) -> Result<(), Failure> {
    let mut cfg = ServiceConfig::load(config.as_deref()).map_err(|e| usage("--config", e))?;
    if let Some(b) = bind {
        cfg.bind = b;
    }
    if cache_dir.is_some() {
        cfg.cache_dir = cache_dir;
    }
    if model.is_some() || endpoint.is_some() {
        let mut judge = cfg.judge.take().unwrap_or_default();
        if let Some(m) = model {
            judge.model = m;
        }
        if let Some(e) = endpoint {
            judge.endpoint = e;
        }
        cfg.judge = Some(judge);
    }
    let flags = service_config(r, None)?;
    if r.alpha.is_some() {
        cfg.reward.alpha = flags.reward.alpha;
    }
    if r.gamma.is_some() {
        cfg.reward.gamma = flags.reward.gamma;
    }
    if r.clip_eps.is_some() {
        cfg.objective.clip_epsilon = flags.objective.clip_epsilon;
    }
    if r.beta.is_some() {
        cfg.objective.beta = flags.objective.beta;
    }
    cfg.validate().map_err(|e| usage("--config", e))?;
    cabs_service::serve(cfg).await.map_err(Failure::backend)
}
