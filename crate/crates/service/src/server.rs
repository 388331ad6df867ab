use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use cabs_core::matching::builtin_matchers;
use cabs_llm::{LlmClient, LlmError, LlmMatcher, ResponseCache, LLM_BACKEND};
use serde::Serialize;

use crate::api::{parse_group_request, ApiError, GroupScorer};
use crate::config::ServiceConfig;

#[derive(Debug, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub version: &'static str,
    pub matcher_backends: Vec<String>,
}

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    let body = serde_json::to_vec(value).expect("response serializes");
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        json_response(status, &self.body())
    }
}

async fn health(State(scorer): State<GroupScorer>) -> Response {
    json_response(
        StatusCode::OK,
        &Health {
            status: "ok",
            version: env!("CARGO_PKG_VERSION"),
            matcher_backends: scorer.matcher_names(),
        },
    )
}

async fn reward_group(State(scorer): State<GroupScorer>, body: Bytes) -> Response {
    let req = match parse_group_request(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let id = req.request_id.clone();
    match scorer.score(req).await {
        Ok(resp) => json_response(StatusCode::OK, &resp),
        Err(e) => {
            tracing::warn!(request_id = ?id, code = e.code.as_str(), path = ?e.path, "group request failed");
            e.into_response()
        }
    }
}

pub fn router(scorer: GroupScorer) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/v1/reward/group", post(reward_group))
        .with_state(scorer)
}

/// Scorer with the lexical matcher and, when a judge client is supplied, the
/// `llm` matcher.
pub fn scorer_with_judge(cfg: ServiceConfig, judge: Option<Arc<LlmClient>>) -> GroupScorer {
    let mut matchers = builtin_matchers();
    if let Some(client) = judge {
        matchers.register(LLM_BACKEND, Arc::new(LlmMatcher::new(client)));
    }
    GroupScorer::new(matchers, cfg)
}

/// Builds the scorer described by `cfg`, connecting to the configured judge
/// over HTTP.
pub fn build_scorer(cfg: ServiceConfig) -> Result<GroupScorer, LlmError> {
    let judge = match &cfg.judge {
        Some(model) => {
            let cache = match &cfg.cache_dir {
                Some(dir) => ResponseCache::on_disk(dir)?,
                None => ResponseCache::in_memory(),
            };
            Some(Arc::new(LlmClient::http(model.clone(), cache)?))
        }
        None => None,
    };
    Ok(scorer_with_judge(cfg, judge))
}

/// Binds `cfg.bind` and serves until the process is stopped.
pub async fn serve(cfg: ServiceConfig) -> std::io::Result<()> {
    let bind = cfg.bind.clone();
    let scorer = build_scorer(cfg).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    tracing::info!(addr = %listener.local_addr()?, backends = ?scorer.matcher_names(), "reward service listening");
    axum::serve(listener, router(scorer)).await
}
