//! Uniform access to chat-completion model endpoints, text-only and
//! vision, with first-token probability extraction, response caching,
//! retries, and a deterministic scripted mock backend.
//!
//! The [`Gateway`] enforces a per-endpoint in-flight limit and writes
//! every completion to its cache before returning, so a warm-cache rerun
//! of any pipeline reproduces the original outputs byte for byte.

mod cache;
mod mock;
mod wire;

pub use mock::{MockMatcher, MockRule, MockScript};

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concurrency::Semaphore;
use crate::hashing::sha256_hex;
use cache::ResponseCache;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("retries exhausted after {attempts} attempts: {last_error}")]
    RetryExhausted { attempts: u32, last_error: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("mock endpoint {endpoint:?} has no matching rule and no default response")]
    MockMiss { endpoint: String },
    #[error("mock script already registered for endpoint {endpoint:?}")]
    AlreadyRegistered { endpoint: String },
    #[error("api key environment variable {var:?} is not set")]
    MissingApiKey { var: String },
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("invalid exchange: {0}")]
    InvalidExchange(String),
    #[error("invalid mock script: {0}")]
    InvalidScript(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a configured endpoint can do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Text,
    Vision,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 250,
        }
    }
}

/// Connection and policy description for one chat-completion endpoint.
/// `api_key_ref` names an environment variable; the key itself is never
/// stored in configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub id: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub api_key_ref: String,
    pub kind: EndpointKind,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry_policy: RetryPolicy,
}

fn default_max_in_flight() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    60
}

impl ModelEndpoint {
    /// A scripted endpoint resolved entirely in process.
    pub fn mock(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            base_url: String::new(),
            model_name: "mock".into(),
            api_key_ref: String::new(),
            kind: EndpointKind::Mock,
            max_in_flight: default_max_in_flight(),
            timeout_secs: default_timeout_secs(),
            retry_policy: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.id.is_empty() {
            return Err(GatewayError::InvalidEndpoint("empty endpoint id".into()));
        }
        if self.max_in_flight < 1 {
            return Err(GatewayError::InvalidEndpoint(format!(
                "endpoint {}: max_in_flight must be >= 1",
                self.id
            )));
        }
        if self.retry_policy.max_attempts < 1 {
            return Err(GatewayError::InvalidEndpoint(format!(
                "endpoint {}: max_attempts must be >= 1",
                self.id
            )));
        }
        if self.kind != EndpointKind::Mock && self.base_url.is_empty() {
            return Err(GatewayError::InvalidEndpoint(format!(
                "endpoint {}: base_url required for non-mock endpoints",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Where an image comes from and how it travels on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    FilePath,
    Url,
    InlineBase64,
}

/// Reference to one image plus the SHA-256 of its decoded bytes, so two
/// references to identical pixels share a digest regardless of transport.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub source: ImageSource,
    pub value: String,
    pub digest: String,
}

impl ImageRef {
    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Ok(Self {
            source: ImageSource::FilePath,
            value: path.as_ref().to_string_lossy().into_owned(),
            digest: sha256_hex(&bytes),
        })
    }

    /// Inline raw bytes as base64. Handy for fixtures: mock endpoints
    /// never decode the payload.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        use base64::Engine as _;
        Self {
            source: ImageSource::InlineBase64,
            value: base64::engine::general_purpose::STANDARD.encode(bytes),
            digest: sha256_hex(bytes),
        }
    }

    /// URL pass-through; the caller supplies the content digest since the
    /// bytes are not fetched at construction time.
    pub fn from_url(url: impl Into<String>, digest: impl Into<String>) -> Self {
        Self {
            source: ImageSource::Url,
            value: url.into(),
            digest: digest.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
}

/// One request envelope: ordered messages (at most one image each),
/// sampling parameters, and whether to ask for token probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<Message>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub want_token_probs: bool,
    #[serde(default = "default_top_k_probs")]
    pub top_k_probs: u32,
}

pub(crate) fn default_top_k_probs() -> u32 {
    20
}

impl ChatExchange {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            messages: vec![Message {
                role: Role::User,
                text: text.into(),
                image: None,
            }],
            sampling: Sampling::default(),
            want_token_probs: false,
            top_k_probs: default_top_k_probs(),
        }
    }

    pub fn user_with_image(text: impl Into<String>, image: ImageRef) -> Self {
        Self {
            messages: vec![Message {
                role: Role::User,
                text: text.into(),
                image: Some(image),
            }],
            sampling: Sampling::default(),
            want_token_probs: false,
            top_k_probs: default_top_k_probs(),
        }
    }

    /// Ask for position-0 token probabilities (top-k entries).
    pub fn with_token_probs(mut self, top_k: u32) -> Self {
        self.want_token_probs = true;
        self.top_k_probs = top_k;
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    /// The text a mock script matches against: all message texts joined
    /// by newlines, in order.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidExchange("no messages".into()));
        }
        if self.want_token_probs && self.top_k_probs < 2 {
            return Err(GatewayError::InvalidExchange(
                "want_token_probs requires top_k_probs >= 2".into(),
            ));
        }
        if self.sampling.temperature < 0.0 {
            return Err(GatewayError::InvalidExchange(
                "temperature must be >= 0".into(),
            ));
        }
        if !(self.sampling.top_p > 0.0 && self.sampling.top_p <= 1.0) {
            return Err(GatewayError::InvalidExchange(
                "top_p must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token_text: String,
    pub probability: f64,
}

/// Token alternatives at one generated position, sorted by descending
/// probability. Position 0 is the first generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub position: usize,
    pub entries: Vec<TokenProb>,
}

impl TokenDistribution {
    pub fn new(position: usize, mut entries: Vec<TokenProb>) -> Self {
        entries.sort_by(|a, b| b.probability.total_cmp(&a.probability));
        Self { position, entries }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        let mut sum = 0.0;
        let mut previous = f64::INFINITY;
        for entry in &self.entries {
            if !(0.0..=1.0).contains(&entry.probability) {
                return Err(GatewayError::Protocol(format!(
                    "token probability {} outside [0, 1]",
                    entry.probability
                )));
            }
            if entry.probability > previous {
                return Err(GatewayError::Protocol(
                    "token entries not sorted by descending probability".into(),
                ));
            }
            previous = entry.probability;
            sum += entry.probability;
        }
        if sum > 1.0 + 1e-6 {
            return Err(GatewayError::Protocol(format!(
                "token probabilities sum to {sum} > 1"
            )));
        }
        Ok(())
    }
}

/// A completed request: generated text plus any per-position token
/// distributions the endpoint reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub distributions: Vec<TokenDistribution>,
}

impl Completion {
    pub(crate) fn validate(&self) -> Result<(), GatewayError> {
        for dist in &self.distributions {
            dist.validate()?;
        }
        Ok(())
    }
}

/// One cached completion, keyed by the digest of (endpoint id, model
/// name, serialized exchange).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response_text: String,
    pub token_distributions: Vec<TokenDistribution>,
    pub created_at: u64,
}

/// Sum of position-0 probabilities over entries whose normalized form
/// (trimmed, case-folded) appears in `target_variants`. Absent tokens
/// contribute nothing; a fully absent target yields 0.0, never an error.
pub fn first_token_prob(distributions: &[TokenDistribution], target_variants: &[&str]) -> f64 {
    let targets: Vec<String> = target_variants.iter().map(|v| normalize_token(v)).collect();
    distributions
        .iter()
        .find(|d| d.position == 0)
        .map(|dist| {
            dist.entries
                .iter()
                .filter(|e| targets.contains(&normalize_token(&e.token_text)))
                .fold(0.0, |acc, e| acc + e.probability)
        })
        .unwrap_or(0.0)
}

fn normalize_token(token: &str) -> String {
    token.trim().to_lowercase()
}

#[derive(Debug, Default, Clone, Copy)]
struct EndpointStats {
    backend_calls: u64,
    in_flight: usize,
    peak_in_flight: usize,
}

/// The gateway: a response cache, a registry of mock scripts, and one
/// in-flight limiter per endpoint id.
pub struct Gateway {
    cache: ResponseCache,
    mocks: RwLock<HashMap<String, MockScript>>,
    limiters: Mutex<HashMap<String, Arc<Semaphore>>>,
    stats: Mutex<HashMap<String, EndpointStats>>,
}

impl Gateway {
    /// Gateway with an in-memory cache; completions do not survive the
    /// process. Good for tests and one-shot library use.
    pub fn in_memory() -> Self {
        Self::with_backend(ResponseCache::memory())
    }

    /// Gateway with a file-backed cache: one file per entry under `dir`,
    /// filename = cache key hex digest.
    pub fn with_cache_dir(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        Ok(Self::with_backend(ResponseCache::disk(dir.into())?))
    }

    fn with_backend(cache: ResponseCache) -> Self {
        Self {
            cache,
            mocks: RwLock::new(HashMap::new()),
            limiters: Mutex::new(HashMap::new()),
            stats: Mutex::new(HashMap::new()),
        }
    }

    /// Register the script backing a mock endpoint. Registration is
    /// one-shot per endpoint id.
    pub fn register_mock(
        &self,
        endpoint_id: impl Into<String>,
        script: MockScript,
    ) -> Result<(), GatewayError> {
        let endpoint_id = endpoint_id.into();
        script.validate()?;
        let mut mocks = self.mocks.write().unwrap();
        if mocks.contains_key(&endpoint_id) {
            return Err(GatewayError::AlreadyRegistered {
                endpoint: endpoint_id,
            });
        }
        mocks.insert(endpoint_id, script);
        Ok(())
    }

    /// Send one exchange. Cache hits return the stored completion without
    /// touching the backend; misses dispatch under the endpoint's
    /// in-flight limit and are cached before returning.
    pub fn complete(
        &self,
        endpoint: &ModelEndpoint,
        exchange: &ChatExchange,
    ) -> Result<Completion, GatewayError> {
        endpoint.validate()?;
        exchange.validate()?;

        let key = cache_key(&endpoint.id, &endpoint.model_name, exchange);
        if let Some(entry) = self.cache.get(&key) {
            return Ok(Completion {
                text: entry.response_text,
                distributions: entry.token_distributions,
            });
        }

        let limiter = self.limiter_for(endpoint);
        let _permit = limiter.acquire();
        self.enter(&endpoint.id);
        let result = match endpoint.kind {
            EndpointKind::Mock => self.resolve_mock(endpoint, exchange),
            EndpointKind::Text | EndpointKind::Vision => wire::call_http(endpoint, exchange),
        };
        self.exit(&endpoint.id);
        let completion = result?;

        self.cache.put(CacheEntry {
            key,
            response_text: completion.text.clone(),
            token_distributions: completion.distributions.clone(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })?;
        Ok(completion)
    }

    fn resolve_mock(
        &self,
        endpoint: &ModelEndpoint,
        exchange: &ChatExchange,
    ) -> Result<Completion, GatewayError> {
        let reply = {
            let mocks = self.mocks.read().unwrap();
            let script = mocks
                .get(&endpoint.id)
                .ok_or_else(|| GatewayError::MockMiss {
                    endpoint: endpoint.id.clone(),
                })?;
            script
                .resolve(exchange)
                .ok_or_else(|| GatewayError::MockMiss {
                    endpoint: endpoint.id.clone(),
                })?
        };
        if let Some(ms) = reply.latency_ms {
            std::thread::sleep(std::time::Duration::from_millis(ms));
        }
        Ok(Completion {
            text: reply.text,
            distributions: reply.distributions,
        })
    }

    fn limiter_for(&self, endpoint: &ModelEndpoint) -> Arc<Semaphore> {
        let mut limiters = self.limiters.lock().unwrap();
        limiters
            .entry(endpoint.id.clone())
            .or_insert_with(|| Arc::new(Semaphore::new(endpoint.max_in_flight)))
            .clone()
    }

    fn enter(&self, endpoint_id: &str) {
        let mut stats = self.stats.lock().unwrap();
        let entry = stats.entry(endpoint_id.to_string()).or_default();
        entry.backend_calls += 1;
        entry.in_flight += 1;
        entry.peak_in_flight = entry.peak_in_flight.max(entry.in_flight);
    }

    fn exit(&self, endpoint_id: &str) {
        let mut stats = self.stats.lock().unwrap();
        if let Some(entry) = stats.get_mut(endpoint_id) {
            entry.in_flight -= 1;
        }
    }

    /// Number of backend dispatches (cache misses) for one endpoint.
    pub fn backend_calls(&self, endpoint_id: &str) -> u64 {
        self.stats
            .lock()
            .unwrap()
            .get(endpoint_id)
            .map(|s| s.backend_calls)
            .unwrap_or(0)
    }

    /// Total backend dispatches across all endpoints.
    pub fn total_backend_calls(&self) -> u64 {
        self.stats
            .lock()
            .unwrap()
            .values()
            .map(|s| s.backend_calls)
            .sum()
    }

    /// Highest number of simultaneously in-flight requests observed for
    /// one endpoint since this gateway was created.
    pub fn peak_in_flight(&self, endpoint_id: &str) -> usize {
        self.stats
            .lock()
            .unwrap()
            .get(endpoint_id)
            .map(|s| s.peak_in_flight)
            .unwrap_or(0)
    }
}

fn cache_key(endpoint_id: &str, model_name: &str, exchange: &ChatExchange) -> String {
    let payload = serde_json::to_vec(&(endpoint_id, model_name, exchange))
        .expect("exchange serialization is infallible");
    sha256_hex(&payload)
}
