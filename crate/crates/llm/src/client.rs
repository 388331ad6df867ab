use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::sync::Semaphore;

use crate::cache::{cache_key, request_digest, ResponseCache};
use crate::config::{ConfigError, ModelConfig};
use crate::parse::ParseError;
use crate::prompt::strict_reprompt;
use crate::transport::{ChatRequest, HttpTransport, Transport, TransportError};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: TransportError },
    #[error(transparent)]
    Transport(TransportError),
    #[error("reply still invalid after strict retry: {0}")]
    Parse(ParseError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

impl LlmError {
    pub fn is_timeout(&self) -> bool {
        matches!(
            self,
            LlmError::ExhaustedRetries {
                last: TransportError::Timeout,
                ..
            } | LlmError::Transport(TransportError::Timeout)
        )
    }
}

/// Chat client with a response cache, a concurrency bound and retry policy.
/// Identical prompts share one upstream call even when issued concurrently.
pub struct LlmClient {
    cfg: ModelConfig,
    transport: Arc<dyn Transport>,
    cache: ResponseCache,
    permits: Semaphore,
    api_key: Option<String>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("model", &self.cfg.model)
            .field("endpoint", &self.cfg.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl LlmClient {
    /// Client over `transport`; the key is read once from `cfg.api_key_env`.
    pub fn new(cfg: ModelConfig, transport: Arc<dyn Transport>, cache: ResponseCache) -> Result<Self, LlmError> {
        cfg.validate()?;
        let api_key = cfg.api_key();
        Ok(LlmClient {
            permits: Semaphore::new(cfg.max_concurrency),
            cfg,
            transport,
            cache,
            api_key,
        })
    }

    pub fn http(cfg: ModelConfig, cache: ResponseCache) -> Result<Self, LlmError> {
        let transport = Arc::new(HttpTransport::new(&cfg.endpoint));
        Self::new(cfg, transport, cache)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn cache_key(&self, prompt: &str) -> String {
        cache_key(&self.cfg.model, self.cfg.temperature, prompt)
    }

    /// Reply text for `prompt`, from cache when available.
    pub async fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let req = ChatRequest::user(&self.cfg.model, prompt, self.cfg.temperature);
        let key = self.cache_key(prompt);
        let digest = request_digest(&req);
        self.cache.get_or_fetch(&key, &digest, || self.send_with_retry(req)).await
    }

    async fn send_with_retry(&self, req: ChatRequest) -> Result<String, LlmError> {
        let _permit = self.permits.acquire().await.expect("semaphore is never closed");
        let timeout = Duration::from_secs_f64(self.cfg.timeout_secs);
        let attempts = self.cfg.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.transport.send(&req, self.api_key.as_deref(), timeout).await {
                Ok(text) => return Ok(text),
                Err(e) if e.is_auth() => {
                    let TransportError::Status { status, .. } = e else { unreachable!() };
                    return Err(LlmError::Auth { status });
                }
                Err(e) if e.is_transient() => {
                    if attempt >= attempts {
                        return Err(LlmError::ExhaustedRetries { attempts, last: e });
                    }
                    let delay = self.cfg.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(20));
                    tracing::warn!(model = %self.cfg.model, attempt, delay_ms = delay, error = %e, "retrying");
                    tokio::time::sleep(Duration::from_millis(delay)).await;
                }
                Err(e) => return Err(LlmError::Transport(e)),
            }
        }
    }

    /// Completes `prompt` and parses the reply. An unusable reply earns one
    /// strict reprompt carrying the parse error; a second failure is final.
    pub async fn complete_json<T>(&self, prompt: &str, parse: impl Fn(&str) -> Result<T, ParseError>) -> Result<T, LlmError> {
        let first = self.complete(prompt).await?;
        let err = match parse(&first) {
            Ok(v) => return Ok(v),
            Err(e) => e,
        };
        tracing::debug!(model = %self.cfg.model, error = %err, "strict reprompt");
        let second = self.complete(&strict_reprompt(prompt, &err.to_string())).await?;
        parse(&second).map_err(LlmError::Parse)
    }
}
