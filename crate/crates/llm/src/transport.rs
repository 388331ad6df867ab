//! Chat-completion wire protocol and transports.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn user(model: &str, prompt: &str, temperature: f64) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
    #[error("unexpected response shape: {0}")]
    Shape(String),
}

impl TransportError {
    pub fn is_auth(&self) -> bool {
        matches!(self, TransportError::Status { status: 401 | 403, .. })
    }

    /// 429, 5xx, timeouts and connection failures.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Timeout | TransportError::Network(_) => true,
            TransportError::Shape(_) => false,
        }
    }
}

/// Sends one chat request and returns the first choice's message text.
#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(&self, req: &ChatRequest, api_key: Option<&str>, timeout: Duration) -> Result<String, TransportError>;
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// Extracts `choices[0].message.content` from a response body.
pub fn first_choice_text(body: &str) -> Result<String, TransportError> {
    let resp: ChatResponse = serde_json::from_str(body).map_err(|e| TransportError::Shape(e.to_string()))?;
    resp.choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| TransportError::Shape("no choices".into()))
}

pub struct HttpTransport {
    endpoint: String,
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new(endpoint: &str) -> Self {
        HttpTransport {
            endpoint: endpoint.to_string(),
            client: reqwest::Client::new(),
        }
    }
}

#[async_trait]
impl Transport for HttpTransport {
    async fn send(&self, req: &ChatRequest, api_key: Option<&str>, timeout: Duration) -> Result<String, TransportError> {
        let body = serde_json::to_vec(req).map_err(|e| TransportError::Shape(e.to_string()))?;
        let mut builder = self
            .client
            .post(&self.endpoint)
            .timeout(timeout)
            .header("content-type", "application/json")
            .body(body);
        if let Some(key) = api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().await.map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.without_url().to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.without_url().to_string())
            }
        })?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body: text });
        }
        first_choice_text(&text)
    }
}

type Responder = dyn Fn(&ChatRequest, usize) -> Result<String, TransportError> + Send + Sync;

/// In-process transport for tests and offline runs. The responder receives
/// the request and the zero-based call index.
pub struct StubTransport {
    responder: Box<Responder>,
    calls: AtomicUsize,
    delay: Duration,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    log: Mutex<Vec<String>>,
}

impl StubTransport {
    pub fn new(responder: impl Fn(&ChatRequest, usize) -> Result<String, TransportError> + Send + Sync + 'static) -> Self {
        StubTransport {
            responder: Box::new(responder),
            calls: AtomicUsize::new(0),
            delay: Duration::ZERO,
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Replays `replies` in order, repeating the last one.
    pub fn scripted(replies: Vec<Result<String, TransportError>>) -> Self {
        assert!(!replies.is_empty());
        Self::new(move |_, i| replies[i.min(replies.len() - 1)].clone())
    }

    /// Sleeps for `delay` inside every call, to expose concurrency.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous calls observed.
    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// Prompts received, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn into_arc(self) -> Arc<Self> {
        Arc::new(self)
    }
}

#[async_trait]
impl Transport for StubTransport {
    async fn send(&self, req: &ChatRequest, _api_key: Option<&str>, _timeout: Duration) -> Result<String, TransportError> {
        let index = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.log.lock().expect("log lock").push(req.prompt().to_string());
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        let out = (self.responder)(req, index);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_shape() {
        let body = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"{\"a\":1}"}}]}"#;
        assert_eq!(first_choice_text(body).unwrap(), r#"{"a":1}"#);
        assert!(matches!(first_choice_text(r#"{"choices":[]}"#), Err(TransportError::Shape(_))));
        assert!(matches!(first_choice_text("<html>"), Err(TransportError::Shape(_))));
    }

    #[test]
    fn error_classes() {
        let s = |status| TransportError::Status { status, body: String::new() };
        assert!(s(401).is_auth() && s(403).is_auth() && !s(429).is_auth());
        assert!(s(429).is_transient() && s(503).is_transient() && !s(400).is_transient());
        assert!(TransportError::Timeout.is_transient());
    }

    #[test]
    fn request_wire_shape() {
        let req = ChatRequest::user("m", "hi", 0.0);
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"model":"m","messages":[{"role":"user","content":"hi"}],"temperature":0.0}"#
        );
    }
}
