// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact-string occurrence counts from a remote n-gram index.
//!
//! Requests are `GET {endpoint}?index={corpus}&query_type=count&query={q}`
//! answered by `{"count": n}`. Results are cached on disk keyed by
//! `(corpus, query)`; a cache hit never touches the network.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CountError {
    #[error("count service configuration: {0}")]
    Config(String),

    #[error("count request for {query:?} failed after {attempts} attempts: {message}")]
    Network { query: String, attempts: u32, message: String },

    #[error("count service error for {query:?}: {message}")]
    Service { query: String, message: String },

    #[error("no fixture count for {0:?}")]
    Missing(String),

    #[error("count cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, CountError>;

pub trait CountService: Send + Sync {
    fn corpus(&self) -> &str;
    fn count(&self, query: &str) -> Result<u64>;
}

pub fn ngram_count(query: &str, client: &dyn CountService) -> Result<u64> {
    client.count(query)
}

/// Keeps the nouns whose "N p N" string is unattested for every
/// preposition.
pub fn filter_unattested(nouns: &[String], preps: &[&str], client: &dyn CountService) -> Result<Vec<String>> {
    let mut kept = Vec::new();
    'noun: for noun in nouns {
        for prep in preps {
            if client.count(&format!("{noun} {prep} {noun}"))? > 0 {
                continue 'noun;
            }
        }
        kept.push(noun.clone());
    }
    Ok(kept)
}

/// Offline counts loaded from a JSON object `{query: count}`.
#[derive(Debug, Clone, Default)]
pub struct FixtureCounts {
    corpus: String,
    counts: HashMap<String, u64>,
}

impl FixtureCounts {
    pub fn new(corpus: impl Into<String>, counts: impl IntoIterator<Item = (String, u64)>) -> Self {
        Self {
            corpus: corpus.into(),
            counts: counts.into_iter().collect(),
        }
    }

    pub fn from_path(corpus: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CountError::Config(format!("{}: {e}", path.display())))?;
        let counts: HashMap<String, u64> =
            serde_json::from_str(&text).map_err(|e| CountError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self {
            corpus: corpus.into(),
            counts,
        })
    }
}

impl CountService for FixtureCounts {
    fn corpus(&self) -> &str {
        &self.corpus
    }

    fn count(&self, query: &str) -> Result<u64> {
        self.counts
            .get(query)
            .copied()
            .ok_or_else(|| CountError::Missing(query.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountServiceConfig {
    pub endpoint: String,
    pub corpus: String,
    pub cache_path: Option<PathBuf>,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_concurrent: usize,
}

impl Default for CountServiceConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.infini-gram.io/".to_string(),
            corpus: "v4_piletrain_llama".to_string(),
            cache_path: None,
            max_retries: 3,
            backoff_ms: 500,
            timeout_ms: 30_000,
            max_concurrent: 4,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

type CacheMap = BTreeMap<String, BTreeMap<String, u64>>;

#[derive(Deserialize)]
struct CountResponse {
    count: Option<u64>,
    error: Option<String>,
}

pub struct CountServiceClient {
    config: CountServiceConfig,
    endpoint: reqwest::Url,
    http: reqwest::blocking::Client,
    cache: Mutex<CacheMap>,
    gate: Gate,
    network_calls: AtomicUsize,
}

impl CountServiceClient {
    pub fn new(config: CountServiceConfig) -> Result<Self> {
        let endpoint = reqwest::Url::parse(&config.endpoint)
            .map_err(|e| CountError::Config(format!("endpoint {:?}: {e}", config.endpoint)))?;
        if !matches!(endpoint.scheme(), "http" | "https") {
            return Err(CountError::Config(format!("endpoint {:?}: unsupported scheme", config.endpoint)));
        }
        if config.corpus.is_empty() {
            return Err(CountError::Config("corpus id is empty".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| CountError::Config(e.to_string()))?;
        let cache = match &config.cache_path {
            Some(p) if p.exists() => {
                let text = fs::read_to_string(p).map_err(|e| CountError::Cache {
                    path: p.clone(),
                    message: e.to_string(),
                })?;
                serde_json::from_str(&text).map_err(|e| CountError::Cache {
                    path: p.clone(),
                    message: e.to_string(),
                })?
            }
            _ => CacheMap::new(),
        };
        Ok(Self {
            gate: Gate {
                free: Mutex::new(config.max_concurrent.max(1)),
                cv: Condvar::new(),
            },
            config,
            endpoint,
            http,
            cache: Mutex::new(cache),
            network_calls: AtomicUsize::new(0),
        })
    }

    /// HTTP requests issued so far (including retries).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn cached(&self, query: &str) -> Option<u64> {
        self.cache
            .lock()
            .unwrap()
            .get(&self.config.corpus)
            .and_then(|m| m.get(query))
            .copied()
    }

    fn store(&self, query: &str, count: u64) -> Result<()> {
        let mut cache = self.cache.lock().unwrap();
        cache
            .entry(self.config.corpus.clone())
            .or_default()
            .insert(query.to_string(), count);
        if let Some(path) = &self.config.cache_path {
            let err = |e: &dyn std::fmt::Display| CountError::Cache {
                path: path.clone(),
                message: e.to_string(),
            };
            let tmp = path.with_extension("tmp");
            let json = serde_json::to_string_pretty(&*cache).map_err(|e| err(&e))?;
            fs::write(&tmp, json).map_err(|e| err(&e))?;
            fs::rename(&tmp, path).map_err(|e| err(&e))?;
        }
        Ok(())
    }

    fn fetch_once(&self, query: &str) -> std::result::Result<u64, (bool, String)> {
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let resp = self
            .http
            .get(self.endpoint.clone())
            .query(&[
                ("index", self.config.corpus.as_str()),
                ("query_type", "count"),
                ("query", query),
            ])
            .send()
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, format!("HTTP {status}")));
        }
        let body: CountResponse = resp.json().map_err(|e| (false, format!("bad response: {e}")))?;
        match (body.count, body.error) {
            (Some(c), _) => Ok(c),
            (None, Some(e)) => Err((false, e)),
            (None, None) => Err((false, "response lacks count".into())),
        }
    }
}

impl CountService for CountServiceClient {
    fn corpus(&self) -> &str {
        &self.config.corpus
    }

    fn count(&self, query: &str) -> Result<u64> {
        if let Some(c) = self.cached(query) {
            return Ok(c);
        }
        let _slot = self.gate.acquire();
        if let Some(c) = self.cached(query) {
            return Ok(c);
        }
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1).min(16)));
            }
            match self.fetch_once(query) {
                Ok(c) => {
                    self.store(query, c)?;
                    return Ok(c);
                }
                Err((true, msg)) => {
                    log::warn!("count request for {query:?} failed (attempt {}): {msg}", attempt + 1);
                    last = msg;
                }
                Err((false, message)) => {
                    return Err(CountError::Service {
                        query: query.to_string(),
                        message,
                    })
                }
            }
        }
        Err(CountError::Network {
            query: query.to_string(),
            attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_counts() {
        let f = FixtureCounts::new("pile", [("day after day".to_string(), 1200), ("cup to cup".to_string(), 0)]);
        assert_eq!(ngram_count("day after day", &f).unwrap(), 1200);
        assert!(matches!(f.count("nope"), Err(CountError::Missing(_))));
    }

    #[test]
    fn filter_keeps_all_zero_nouns() {
        let mut counts = Vec::new();
        for p in ["after", "by"] {
            counts.push((format!("day {p} day"), if p == "after" { 5 } else { 0 }));
            counts.push((format!("quark {p} quark"), 0));
        }
        let f = FixtureCounts::new("pile", counts);
        let nouns = vec!["day".to_string(), "quark".to_string()];
        assert_eq!(filter_unattested(&nouns, &["after", "by"], &f).unwrap(), vec!["quark"]);
        assert!(filter_unattested(&[], &["after"], &f).unwrap().is_empty());
    }

    #[test]
    fn filter_propagates_errors() {
        let f = FixtureCounts::new("pile", []);
        assert!(filter_unattested(&["x".to_string()], &["by"], &f).is_err());
    }

    #[test]
    fn malformed_endpoint() {
        let cfg = CountServiceConfig {
            endpoint: "not a url".into(),
            ..Default::default()
        };
        assert!(matches!(CountServiceClient::new(cfg), Err(CountError::Config(_))));
        let cfg = CountServiceConfig {
            endpoint: "ftp://example.org/".into(),
            ..Default::default()
        };
        assert!(matches!(CountServiceClient::new(cfg), Err(CountError::Config(_))));
    }
}
