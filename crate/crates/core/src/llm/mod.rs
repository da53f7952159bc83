//! Chat-completion client with on-disk response caching, retries and a
//! global rate limit.

mod cache;
mod http;
mod rate;
mod stub;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheError, CacheRecord, ResponseCache};
pub use http::{post_json, HttpChatConfig, HttpChatProvider};
pub use rate::{Clock, FakeClock, RateLimiter, SystemClock};
pub use stub::{StubProvider, StubRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub provider_tag: String,
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Content-addressed key over every field. Messages are hashed byte-exact.
    pub fn cache_key(&self) -> CacheKey {
        #[derive(Serialize)]
        struct Canonical<'a> {
            v: u32,
            provider_tag: &'a str,
            model: &'a str,
            messages: &'a [Message],
            max_tokens: Option<u32>,
            seed: u64,
            temperature_bits: u64,
        }
        let canon = Canonical {
            v: 1,
            provider_tag: &self.provider_tag,
            model: &self.model,
            messages: &self.messages,
            max_tokens: self.max_tokens,
            seed: self.seed,
            temperature_bits: self.temperature.to_bits(),
        };
        CacheKey::digest(&serde_json::to_vec(&canon).expect("request serializes"))
    }

    /// All message contents joined by newlines.
    pub fn transcript(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Hex SHA-256 digest identifying one cached response.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn digest(bytes: &[u8]) -> Self {
        Self(hex::encode(Sha256::digest(bytes)))
    }

    pub fn from_hex(hex: impl Into<String>) -> Option<Self> {
        let s = hex.into();
        (s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())).then_some(Self(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("scripted error: {0}")]
    Scripted(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Status { status, .. } => *status == 429 || (500..600).contains(status),
            Self::Transport(_) => true,
            Self::Malformed(_) | Self::Scripted(_) | Self::Config(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: ProviderError },
    #[error(transparent)]
    Provider(ProviderError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// A chat-completion backend.
pub trait ChatProvider: Send + Sync {
    fn tag(&self) -> &str;
    fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `retry` (0-based): base · 2^retry, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails permanently, or retries run out.
    pub fn run<T>(&self, clock: &dyn Clock, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, LlmError> {
        let mut attempt = 0u32;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if !e.is_retryable() => return Err(LlmError::Provider(e)),
                Err(e) if attempt >= self.max_retries => {
                    return Err(LlmError::Exhausted {
                        attempts: attempt + 1,
                        last: e,
                    })
                }
                Err(_) => {
                    clock.sleep(self.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Shareable client: cache lookup, then rate-limited, retried provider calls.
pub struct LlmClient {
    provider: Arc<dyn ChatProvider>,
    cache: Option<Arc<ResponseCache>>,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    clock: Arc<dyn Clock>,
    calls: AtomicU64,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            cache: None,
            retry: RetryPolicy::default(),
            limiter: None,
            clock: Arc::new(SystemClock::new()),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn provider_tag(&self) -> &str {
        self.provider.tag()
    }

    /// Provider invocations made so far, retries included.
    pub fn provider_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        req.validate()?;
        let key = req.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(rec) = cache.get(&key)? {
                return Ok(rec.payload);
            }
        }
        let text = self.retry.run(self.clock.as_ref(), || {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.provider.complete(req)
        })?;
        if let Some(cache) = &self.cache {
            cache.put(&key, self.provider.tag(), &text)?;
        }
        Ok(text)
    }
}
