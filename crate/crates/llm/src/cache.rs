//! Content-addressed response cache.
//!
//! Keys are SHA-256 over `(model, temperature, prompt)`. Distinct triples
//! collide with probability about `n^2 / 2^257` for `n` cached entries.
//! Entries live in memory and, when a directory is configured, as
//! `{key}.json` files holding `{request_digest, response_text, timestamp}`.

use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::OnceCell;

use crate::transport::ChatRequest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_digest: String,
    pub response_text: String,
    /// Seconds since the Unix epoch at write time.
    pub timestamp: u64,
}

pub fn cache_key(model: &str, temperature: f64, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0u8]);
    h.update(temperature.to_bits().to_be_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// Digest of the serialized request body.
pub fn request_digest(req: &ChatRequest) -> String {
    let body = serde_json::to_vec(req).expect("request serializes");
    hex::encode(Sha256::digest(&body))
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    cells: DashMap<String, Arc<OnceCell<String>>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache {
            dir: Some(dir),
            cells: DashMap::new(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn cell(&self, key: &str) -> Arc<OnceCell<String>> {
        self.cells.entry(key.to_string()).or_default().clone()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub async fn read_disk(&self, key: &str) -> Option<CacheEntry> {
        let path = self.path(key)?;
        let bytes = tokio::fs::read(&path).await.ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    async fn write_disk(&self, key: &str, entry: &CacheEntry) -> std::io::Result<()> {
        let Some(path) = self.path(key) else {
            return Ok(());
        };
        let tmp = path.with_extension(format!("json.tmp{}", std::process::id()));
        tokio::fs::write(&tmp, serde_json::to_vec_pretty(entry).expect("entry serializes")).await?;
        tokio::fs::rename(&tmp, &path).await
    }

    /// Returns the cached text for `key`, or runs `fetch` once no matter how
    /// many callers race on the same key. Failures are not cached.
    pub async fn get_or_fetch<F, Fut, E>(&self, key: &str, digest: &str, fetch: F) -> Result<String, E>
    where
        F: FnOnce() -> Fut,
        Fut: Future<Output = Result<String, E>>,
        E: From<std::io::Error>,
    {
        let cell = self.cell(key);
        let text = cell
            .get_or_try_init(|| async {
                if let Some(entry) = self.read_disk(key).await {
                    return Ok(entry.response_text);
                }
                let text = fetch().await?;
                let entry = CacheEntry {
                    request_digest: digest.to_string(),
                    response_text: text.clone(),
                    timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                };
                self.write_disk(key, &entry).await?;
                Ok::<_, E>(text)
            })
            .await?;
        Ok(text.clone())
    }

    /// Keys resolved through this cache, sorted.
    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self
            .cells
            .iter()
            .filter(|e| e.value().initialized())
            .map(|e| e.key().clone())
            .collect();
        keys.sort();
        keys
    }

    /// Writes the resolved keys, one per line, so a run can be replayed from
    /// the cache directory.
    pub fn write_manifest(&self, path: &Path) -> std::io::Result<()> {
        let mut body = self.keys().join("\n");
        body.push('\n');
        std::fs::write(path, body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_separate_fields() {
        let a = cache_key("m", 0.0, "ab");
        assert_eq!(a.len(), 64);
        assert_ne!(a, cache_key("ma", 0.0, "b"));
        assert_ne!(a, cache_key("m", 0.5, "ab"));
        assert_eq!(a, cache_key("m", 0.0, "ab"));
    }

    #[tokio::test]
    async fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::on_disk(dir.path()).unwrap();
        let got: Result<String, std::io::Error> = cache.get_or_fetch("k", "d", || async { Ok("reply".to_string()) }).await;
        assert_eq!(got.unwrap(), "reply");
        let entry: CacheEntry = serde_json::from_slice(&std::fs::read(dir.path().join("k.json")).unwrap()).unwrap();
        assert_eq!((entry.request_digest.as_str(), entry.response_text.as_str()), ("d", "reply"));

        let fresh = ResponseCache::on_disk(dir.path()).unwrap();
        let got: Result<String, std::io::Error> = fresh
            .get_or_fetch("k", "d", || async { panic!("must be served from disk") })
            .await;
        assert_eq!(got.unwrap(), "reply");
        fresh.write_manifest(&dir.path().join("manifest.txt")).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap(), "k\n");
    }

    #[tokio::test]
    async fn failures_are_not_cached() {
        let cache = ResponseCache::in_memory();
        let e: Result<String, std::io::Error> = cache.get_or_fetch("k", "d", || async { Err(std::io::Error::other("x")) }).await;
        assert!(e.is_err());
        let ok: Result<String, std::io::Error> = cache.get_or_fetch("k", "d", || async { Ok("y".into()) }).await;
        assert_eq!(ok.unwrap(), "y");
    }
}
