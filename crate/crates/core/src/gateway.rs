//! Clients for the completion and search services: bounded retries, a
//! minimum-interval rate limit, and a content-addressed record/replay cache.
//!
//! The cache is first-class: with a sealed cache (no transport) the whole
//! pipeline runs offline and byte-deterministically from committed fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Decoding parameters sent with every completion request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_length: u32,
    pub n_candidates: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.3,
            top_p: 0.1,
            max_length: 2048,
            n_candidates: 2,
        }
    }
}

impl DecodingParams {
    pub fn single(mut self) -> Self {
        self.n_candidates = 1;
        self
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("missing API key: set the {0} environment variable or warm the cache")]
    MissingApiKey(&'static str),
    #[error("cache sealed and no entry for request {0}")]
    CacheMiss(String),
    #[error("transport failed after {attempts} attempt(s) for request {digest}: {message}")]
    Exhausted {
        digest: String,
        attempts: u32,
        message: String,
    },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("cache I/O error at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Abstract completion endpoint. The pipeline and the evaluation harnesses
/// only see this trait, so tests drive them with scripted mocks.
pub trait CompletionService: Send + Sync {
    /// Returns `params.n_candidates` candidate texts for the prompt.
    fn complete(
        &self,
        system: &str,
        user: &str,
        params: &DecodingParams,
    ) -> Result<Vec<String>, GatewayError>;
}

/// Abstract search endpoint returning the provider payload verbatim.
pub trait SearchService: Send + Sync {
    fn search(&self, query: &str) -> Result<serde_json::Value, GatewayError>;
}

/// A canonicalized request. Identical logical requests serialize to the same
/// payload and therefore share a cache key.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatewayRequest {
    Completion {
        model: String,
        system: String,
        user: String,
        temperature: f64,
        top_p: f64,
        max_length: u32,
        n_candidates: u32,
    },
    Search {
        query: String,
    },
}

impl GatewayRequest {
    pub fn canonical_payload(&self) -> String {
        serde_json::to_string(self).expect("request serialization cannot fail")
    }

    /// Hex SHA-256 digest of the canonical payload.
    pub fn cache_key(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_payload().as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Raw provider-level exchange. `body` is the candidates array for
/// completions and the provider payload for searches.
#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    payload: String,
    body: serde_json::Value,
}

/// Digest-named files under one directory; concurrent readers, atomic
/// single-writer inserts via rename.
pub struct ReplayCache {
    dir: PathBuf,
}

impl ReplayCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| GatewayError::CacheIo {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self { dir })
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<serde_json::Value> {
        let path = self.entry_path(key);
        let text = fs::read_to_string(path).ok()?;
        serde_json::from_str::<CacheEntry>(&text).ok().map(|e| e.body)
    }

    pub fn put(
        &self,
        request: &GatewayRequest,
        body: serde_json::Value,
    ) -> Result<(), GatewayError> {
        let key = request.cache_key();
        let entry = CacheEntry {
            payload: request.canonical_payload(),
            body,
        };
        let tmp = self.dir.join(format!(".{key}.tmp"));
        let final_path = self.entry_path(&key);
        let text = serde_json::to_string_pretty(&entry).expect("entry serialization cannot fail");
        fs::write(&tmp, text).map_err(|source| GatewayError::CacheIo {
            path: tmp.display().to_string(),
            source,
        })?;
        fs::rename(&tmp, &final_path).map_err(|source| GatewayError::CacheIo {
            path: final_path.display().to_string(),
            source,
        })
    }
}

/// Raw transport behind the gateway. One call, no retries; the gateway owns
/// the retry and rate-limit policy.
pub trait Transport: Send + Sync {
    fn send(&self, request: &GatewayRequest) -> Result<serde_json::Value, GatewayError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub model: String,
    pub completion_url: String,
    pub search_url: String,
    /// Maximum attempts per request (first try included).
    pub retry_budget: u32,
    /// Base backoff delay; doubles per attempt.
    pub backoff_ms: u64,
    /// Minimum spacing between outbound requests.
    pub min_interval_ms: u64,
    /// Maximum in-flight requests.
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo-1106".to_string(),
            completion_url: "https://api.openai.com/v1/chat/completions".to_string(),
            search_url: "https://google.serper.dev/search".to_string(),
            retry_budget: 3,
            backoff_ms: 500,
            min_interval_ms: 0,
            max_in_flight: 4,
        }
    }
}

struct InFlightGate {
    count: Mutex<usize>,
    cond: Condvar,
    limit: usize,
}

impl InFlightGate {
    fn new(limit: usize) -> Self {
        Self {
            count: Mutex::new(0),
            cond: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) {
        let mut count = self.count.lock().unwrap();
        while *count >= self.limit {
            count = self.cond.wait(count).unwrap();
        }
        *count += 1;
    }

    fn release(&self) {
        let mut count = self.count.lock().unwrap();
        *count -= 1;
        self.cond.notify_one();
    }
}

/// The shared gateway. Lookup order: cache, then transport (when present)
/// with retries. A gateway without a transport is "sealed" and serves only
/// from cache.
pub struct Gateway {
    config: GatewayConfig,
    cache: Option<ReplayCache>,
    transport: Option<Box<dyn Transport>>,
    last_request: Mutex<Option<Instant>>,
    in_flight: InFlightGate,
}

impl Gateway {
    pub fn new(
        config: GatewayConfig,
        cache: Option<ReplayCache>,
        transport: Option<Box<dyn Transport>>,
    ) -> Self {
        let in_flight = InFlightGate::new(config.max_in_flight);
        Self {
            config,
            cache,
            transport,
            last_request: Mutex::new(None),
            in_flight,
        }
    }

    /// Cache-only gateway over an existing fixture directory.
    pub fn sealed(config: GatewayConfig, cache_dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let cache = ReplayCache::open(cache_dir.as_ref())?;
        Ok(Self::new(config, Some(cache), None))
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn completion_request(
        &self,
        system: &str,
        user: &str,
        params: &DecodingParams,
    ) -> GatewayRequest {
        GatewayRequest::Completion {
            model: self.config.model.clone(),
            system: system.to_string(),
            user: user.to_string(),
            temperature: params.temperature,
            top_p: params.top_p,
            max_length: params.max_length,
            n_candidates: params.n_candidates,
        }
    }

    pub fn search_request(&self, query: &str) -> GatewayRequest {
        GatewayRequest::Search {
            query: query.to_string(),
        }
    }

    fn pace(&self) {
        if self.config.min_interval_ms == 0 {
            return;
        }
        let interval = Duration::from_millis(self.config.min_interval_ms);
        let mut last = self.last_request.lock().unwrap();
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < interval {
                std::thread::sleep(interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn execute(&self, request: &GatewayRequest) -> Result<serde_json::Value, GatewayError> {
        let key = request.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(body) = cache.get(&key) {
                return Ok(body);
            }
        }
        let transport = match &self.transport {
            Some(t) => t,
            None => return Err(GatewayError::CacheMiss(key)),
        };

        self.in_flight.acquire();
        let result = self.execute_with_retries(transport.as_ref(), request, &key);
        self.in_flight.release();

        let body = result?;
        if let Some(cache) = &self.cache {
            cache.put(request, body.clone())?;
        }
        Ok(body)
    }

    fn execute_with_retries(
        &self,
        transport: &dyn Transport,
        request: &GatewayRequest,
        key: &str,
    ) -> Result<serde_json::Value, GatewayError> {
        let attempts = self.config.retry_budget.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.config.backoff_ms << (attempt - 1),
                ));
            }
            self.pace();
            match transport.send(request) {
                Ok(body) => return Ok(body),
                Err(GatewayError::Exhausted { message, .. }) => last_error = message,
                Err(other) => return Err(other),
            }
        }
        Err(GatewayError::Exhausted {
            digest: key.to_string(),
            attempts,
            message: last_error,
        })
    }
}

impl CompletionService for Gateway {
    fn complete(
        &self,
        system: &str,
        user: &str,
        params: &DecodingParams,
    ) -> Result<Vec<String>, GatewayError> {
        let request = self.completion_request(system, user, params);
        let body = self.execute(&request)?;
        let candidates: Vec<String> = serde_json::from_value(body)
            .map_err(|e| GatewayError::BadResponse(format!("expected candidate array: {e}")))?;
        if candidates.len() != params.n_candidates as usize {
            return Err(GatewayError::BadResponse(format!(
                "expected {} candidates, got {}",
                params.n_candidates,
                candidates.len()
            )));
        }
        Ok(candidates)
    }
}

impl SearchService for Gateway {
    fn search(&self, query: &str) -> Result<serde_json::Value, GatewayError> {
        let request = self.search_request(query);
        self.execute(&request)
    }
}

/// HTTP transport against an OpenAI-style chat endpoint and a Serper-style
/// search endpoint. Only constructed when a request actually needs the
/// network, so sealed-cache runs never touch the API keys.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    config: GatewayConfig,
}

impl HttpTransport {
    pub fn new(config: GatewayConfig) -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
            config,
        }
    }

    fn api_key(var: &'static str) -> Result<String, GatewayError> {
        std::env::var(var).map_err(|_| GatewayError::MissingApiKey(var))
    }

    fn transient(message: String) -> GatewayError {
        GatewayError::Exhausted {
            digest: String::new(),
            attempts: 1,
            message,
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &GatewayRequest) -> Result<serde_json::Value, GatewayError> {
        match request {
            GatewayRequest::Completion {
                model,
                system,
                user,
                temperature,
                top_p,
                max_length,
                n_candidates,
            } => {
                let key = Self::api_key("LLM_API_KEY")?;
                let body = serde_json::json!({
                    "model": model,
                    "messages": [
                        {"role": "system", "content": system},
                        {"role": "user", "content": user},
                    ],
                    "temperature": temperature,
                    "top_p": top_p,
                    "max_tokens": max_length,
                    "n": n_candidates,
                });
                let response = self
                    .client
                    .post(&self.config.completion_url)
                    .bearer_auth(key)
                    .json(&body)
                    .send()
                    .map_err(|e| Self::transient(e.to_string()))?;
                if !response.status().is_success() {
                    return Err(Self::transient(format!("HTTP {}", response.status())));
                }
                let value: serde_json::Value = response
                    .json()
                    .map_err(|e| GatewayError::BadResponse(e.to_string()))?;
                let choices = value
                    .get("choices")
                    .and_then(|c| c.as_array())
                    .ok_or_else(|| GatewayError::BadResponse("missing choices".to_string()))?;
                let candidates: Vec<serde_json::Value> = choices
                    .iter()
                    .map(|choice| {
                        choice
                            .pointer("/message/content")
                            .and_then(|c| c.as_str())
                            .map(|s| serde_json::Value::String(s.to_string()))
                            .ok_or_else(|| {
                                GatewayError::BadResponse("choice without content".to_string())
                            })
                    })
                    .collect::<Result<_, _>>()?;
                Ok(serde_json::Value::Array(candidates))
            }
            GatewayRequest::Search { query } => {
                let key = Self::api_key("SEARCH_API_KEY")?;
                let response = self
                    .client
                    .post(&self.config.search_url)
                    .header("X-API-KEY", key)
                    .json(&serde_json::json!({ "q": query }))
                    .send()
                    .map_err(|e| Self::transient(e.to_string()))?;
                if !response.status().is_success() {
                    return Err(Self::transient(format!("HTTP {}", response.status())));
                }
                response
                    .json()
                    .map_err(|e| GatewayError::BadResponse(e.to_string()))
            }
        }
    }
}
