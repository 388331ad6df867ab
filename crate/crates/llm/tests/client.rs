use std::sync::Arc;
use std::time::{Duration, Instant};

use cabs_core::fixtures::reference_decomposition;
use cabs_core::matching::{Matcher, Prediction};
use cabs_llm::{LlmClient, LlmError, LlmMatcher, ModelConfig, ResponseCache, StubTransport, TransportError};

fn cfg(key_env: &str) -> ModelConfig {
    ModelConfig {
        api_key_env: key_env.into(),
        backoff_base_ms: 20,
        ..Default::default()
    }
}

fn status(code: u16) -> TransportError {
    TransportError::Status {
        status: code,
        body: "nope".into(),
    }
}

#[tokio::test]
async fn cache_hit_skips_transport() {
    let dir = tempfile::tempdir().unwrap();
    let stub = StubTransport::scripted(vec![Ok("pong".into())]).into_arc();
    let client = LlmClient::new(cfg("CABS_TEST_NO_KEY"), stub.clone(), ResponseCache::on_disk(dir.path()).unwrap()).unwrap();
    assert_eq!(client.complete("ping").await.unwrap(), "pong");
    assert_eq!(client.complete("ping").await.unwrap(), "pong");
    assert_eq!(stub.calls(), 1);

    let stub2 = StubTransport::scripted(vec![Ok("other".into())]).into_arc();
    let reopened = LlmClient::new(cfg("CABS_TEST_NO_KEY"), stub2.clone(), ResponseCache::on_disk(dir.path()).unwrap()).unwrap();
    assert_eq!(reopened.complete("ping").await.unwrap(), "pong");
    assert_eq!(stub2.calls(), 0);
    assert!(dir.path().join(format!("{}.json", reopened.cache_key("ping"))).exists());
}

#[tokio::test]
async fn rate_limit_then_success_backs_off_once() {
    let stub = StubTransport::scripted(vec![Err(status(429)), Ok("ok".into())]).into_arc();
    let client = LlmClient::new(cfg("CABS_TEST_NO_KEY"), stub.clone(), ResponseCache::in_memory()).unwrap();
    let start = Instant::now();
    assert_eq!(client.complete("p").await.unwrap(), "ok");
    assert!(start.elapsed() >= Duration::from_millis(20));
    assert_eq!(stub.calls(), 2);
}

#[tokio::test]
async fn retries_are_bounded() {
    let stub = StubTransport::scripted(vec![Err(TransportError::Timeout)]).into_arc();
    let client = LlmClient::new(
        ModelConfig {
            max_retries: 2,
            backoff_base_ms: 1,
            ..cfg("CABS_TEST_NO_KEY")
        },
        stub.clone(),
        ResponseCache::in_memory(),
    )
    .unwrap();
    let err = client.complete("p").await.unwrap_err();
    assert!(matches!(err, LlmError::ExhaustedRetries { attempts: 3, .. }));
    assert!(err.is_timeout());
    assert_eq!(stub.calls(), 3);
}

#[tokio::test]
async fn auth_failure_is_immediate_and_not_cached() {
    let stub = StubTransport::scripted(vec![Err(status(401)), Ok("late".into())]).into_arc();
    let client = LlmClient::new(cfg("CABS_TEST_NO_KEY"), stub.clone(), ResponseCache::in_memory()).unwrap();
    assert!(matches!(client.complete("p").await, Err(LlmError::Auth { status: 401 })));
    assert_eq!(stub.calls(), 1);
    assert_eq!(client.complete("p").await.unwrap(), "late");
}

#[tokio::test]
async fn concurrent_identical_prompts_coalesce() {
    let stub = StubTransport::scripted(vec![Ok("one".into())])
        .with_delay(Duration::from_millis(50))
        .into_arc();
    let client = Arc::new(LlmClient::new(cfg("CABS_TEST_NO_KEY"), stub.clone(), ResponseCache::in_memory()).unwrap());
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let c = client.clone();
            tokio::spawn(async move { c.complete("same").await.unwrap() })
        })
        .collect();
    for h in handles {
        assert_eq!(h.await.unwrap(), "one");
    }
    assert_eq!(stub.calls(), 1);
}

#[tokio::test]
async fn concurrency_bound_is_respected() {
    let stub = StubTransport::new(|req, _| Ok(req.prompt().to_uppercase()))
        .with_delay(Duration::from_millis(20))
        .into_arc();
    let client = Arc::new(
        LlmClient::new(
            ModelConfig {
                max_concurrency: 3,
                ..cfg("CABS_TEST_NO_KEY")
            },
            stub.clone(),
            ResponseCache::in_memory(),
        )
        .unwrap(),
    );
    let handles: Vec<_> = (0..12)
        .map(|i| {
            let c = client.clone();
            tokio::spawn(async move { c.complete(&format!("p{i}")).await.unwrap() })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        assert_eq!(h.await.unwrap(), format!("P{i}"));
    }
    assert_eq!(stub.calls(), 12);
    assert!(stub.peak_in_flight() <= 3, "peak {}", stub.peak_in_flight());
}

#[tokio::test]
async fn api_key_never_reaches_cache_files() {
    let secret = "sk-test-7f3a9c1e";
    std::env::set_var("CABS_TEST_SECRET_KEY", secret);
    let dir = tempfile::tempdir().unwrap();
    let stub = StubTransport::scripted(vec![Ok("reply".into())]).into_arc();
    let client = LlmClient::new(cfg("CABS_TEST_SECRET_KEY"), stub, ResponseCache::on_disk(dir.path()).unwrap()).unwrap();
    client.complete("hello").await.unwrap();
    assert!(!format!("{client:?}").contains(secret));
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let body = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!body.contains(secret));
    }
}

const GOOD_JUDGE: &str = r#"{"abnormalities":[{"name":"ground-glass opacity","hit":true,"location_match":true,"attribute_match":true},{"name":"fatty liver","hit":false,"location_match":false,"attribute_match":false},{"name":"pleural effusion","hit":true,"location_match":true,"attribute_match":false}],"false_positive":[]}"#;

#[tokio::test]
async fn invalid_reply_gets_one_strict_retry() {
    let stub = StubTransport::scripted(vec![Ok("Sure! Here you go.".into()), Ok(GOOD_JUDGE.into())]).into_arc();
    let client = Arc::new(LlmClient::new(cfg("CABS_TEST_NO_KEY"), stub.clone(), ResponseCache::in_memory()).unwrap());
    let matcher = LlmMatcher::new(client);
    let gt = reference_decomposition();
    let m = matcher
        .match_prediction(&gt, &Prediction::Text("Ground-glass opacity in the right lower lobe.".into()))
        .await
        .unwrap();
    assert_eq!(m.hits(), 2);
    assert_eq!(m.pred_count, 2);
    let prompts = stub.prompts();
    assert_eq!(prompts.len(), 2);
    assert!(prompts[1].starts_with(&prompts[0]));
    assert!(prompts[1].contains("could not be used"));
}

#[tokio::test]
async fn second_invalid_reply_is_final() {
    let stub = StubTransport::scripted(vec![Ok("nope".into())]).into_arc();
    let client = Arc::new(LlmClient::new(cfg("CABS_TEST_NO_KEY"), stub.clone(), ResponseCache::in_memory()).unwrap());
    let err = LlmMatcher::new(client)
        .match_prediction(&reference_decomposition(), &Prediction::Text("x".into()))
        .await
        .unwrap_err();
    assert!(matches!(err, cabs_core::matching::MatchError::MatchFailed(_)));
    assert_eq!(stub.calls(), 2);
}
