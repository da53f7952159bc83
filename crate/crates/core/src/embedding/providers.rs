use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{EmbeddingError, EmbeddingVector};
use crate::llm::{post_json, CacheKey, Clock, ProviderError, ResponseCache, RetryPolicy, SystemClock};

/// The encoder contract: one vector per input text, same order, fixed
/// dimension, and identical text yields an identical vector within a run.
pub trait EmbeddingProvider: Send + Sync {
    fn tag(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    /// Whole text hashed to one pseudo-random direction.
    Text,
    /// Sum of per-token pseudo-random directions, so texts sharing words
    /// land near each other.
    Tokens,
}

/// Deterministic offline encoder seeded by SHA-256 of the content.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
    mode: MockMode,
    tag: String,
}

impl MockEmbedder {
    pub fn new(dimension: usize, mode: MockMode) -> Self {
        assert!(dimension > 0, "mock embedding dimension must be positive");
        let tag = match mode {
            MockMode::Text => format!("mock-text-{dimension}"),
            MockMode::Tokens => format!("mock-tokens-{dimension}"),
        };
        Self { dimension, mode, tag }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Components uniform in [-1, 1) from SHA-256 in counter mode.
    fn hashed_direction(&self, seed: &[u8], out: &mut [f64]) {
        let mut block = 0u32;
        let mut filled = 0;
        while filled < out.len() {
            let mut h = Sha256::new();
            h.update(seed);
            h.update(block.to_le_bytes());
            let digest = h.finalize();
            for chunk in digest.chunks_exact(4) {
                if filled == out.len() {
                    break;
                }
                let u = u32::from_le_bytes(chunk.try_into().unwrap());
                out[filled] += u as f64 / 2f64.powi(31) - 1.0;
                filled += 1;
            }
            block += 1;
        }
    }

    fn vector_for(&self, text: &str) -> EmbeddingVector {
        let mut acc = vec![0f64; self.dimension];
        match self.mode {
            MockMode::Text => self.hashed_direction(text.as_bytes(), &mut acc),
            MockMode::Tokens => {
                let lowered = text.to_lowercase();
                let mut any = false;
                for tok in lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
                    self.hashed_direction(tok.as_bytes(), &mut acc);
                    any = true;
                }
                if !any {
                    self.hashed_direction(text.as_bytes(), &mut acc);
                }
            }
        }
        let mut n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            acc[0] = 1.0;
            n = 1.0;
        }
        EmbeddingVector(acc.iter().map(|x| (x / n) as f32).collect())
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

#[derive(Deserialize)]
struct KeyedVector {
    key: String,
    vector: Vec<f32>,
}

/// Precomputed vectors keyed by string, loaded from line-delimited
/// `{"key": ..., "vector": [...]}` records.
///
/// Used by key = object id when building an index, and by key = text as a
/// lookup provider.
#[derive(Debug, Clone)]
pub struct FileEmbeddings {
    tag: String,
    dimension: usize,
    keys: Vec<String>,
    vectors: HashMap<String, EmbeddingVector>,
}

impl FileEmbeddings {
    pub fn load(path: &Path, tag: impl Into<String>) -> Result<Self, EmbeddingError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| EmbeddingError::Other(format!("{}: {e}", path.display())))?;
        Self::parse(&text, tag)
    }

    pub fn parse(text: &str, tag: impl Into<String>) -> Result<Self, EmbeddingError> {
        let mut out = Self {
            tag: tag.into(),
            dimension: 0,
            keys: Vec::new(),
            vectors: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: KeyedVector = serde_json::from_str(line)
                .map_err(|e| EmbeddingError::Other(format!("embeddings line {}: {e}", i + 1)))?;
            if out.keys.is_empty() {
                out.dimension = rec.vector.len();
            } else if rec.vector.len() != out.dimension {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: out.dimension,
                    found: rec.vector.len(),
                });
            }
            if out.vectors.contains_key(&rec.key) {
                return Err(EmbeddingError::DuplicateId(rec.key));
            }
            out.keys.push(rec.key.clone());
            out.vectors.insert(rec.key, EmbeddingVector::new(rec.vector)?);
        }
        Ok(out)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(key)
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts
            .iter()
            .map(|t| {
                self.get(t)
                    .cloned()
                    .ok_or_else(|| EmbeddingError::MissingKey(t.clone()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_batch() -> usize {
    32
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}

/// Remote encoder. Sends `{"model", "input": [texts]}` and accepts either
/// `{"embeddings": [[...]]}` or `{"data": [{"index", "embedding"}]}`.
pub struct HttpEmbedder {
    tag: String,
    config: HttpEmbedderConfig,
    agent: ureq::Agent,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Self {
            tag: format!("http:{}", config.model),
            retry: RetryPolicy {
                max_retries: config.retries,
                ..RetryPolicy::default()
            },
            config,
            agent,
            clock: Arc::new(SystemClock::new()),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    fn decode(resp: &Value, expected: usize) -> Result<Vec<Vec<f32>>, ProviderError> {
        let bad = |m: &str| ProviderError::Malformed(m.to_string());
        let as_floats = |v: &Value| -> Result<Vec<f32>, ProviderError> {
            v.as_array()
                .ok_or_else(|| bad("embedding is not an array"))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32).ok_or_else(|| bad("non-numeric component")))
                .collect()
        };
        let rows: Vec<Vec<f32>> = if let Some(list) = resp.get("embeddings").and_then(Value::as_array) {
            list.iter().map(as_floats).collect::<Result<_, _>>()?
        } else if let Some(data) = resp.get("data").and_then(Value::as_array) {
            let mut rows = vec![None; data.len()];
            for (pos, item) in data.iter().enumerate() {
                let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
                let slot = rows.get_mut(idx).ok_or_else(|| bad("embedding index out of range"))?;
                *slot = Some(as_floats(
                    item.get("embedding").ok_or_else(|| bad("missing embedding"))?,
                )?);
            }
            rows.into_iter()
                .map(|r| r.ok_or_else(|| bad("missing embedding index")))
                .collect::<Result<_, _>>()?
        } else {
            return Err(bad("expected `embeddings` or `data`"));
        };
        if rows.len() != expected {
            return Err(bad(&format!("{} embeddings for {expected} inputs", rows.len())));
        }
        Ok(rows)
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.config.batch_size.max(1)) {
            let body = json!({ "model": self.config.model, "input": batch });
            let rows = self.retry.run(self.clock.as_ref(), || {
                let resp = post_json(
                    &self.agent,
                    &self.config.endpoint,
                    self.config.auth_env.as_deref(),
                    &body,
                )?;
                Self::decode(&resp, batch.len())
            })?;
            for row in rows {
                out.push(EmbeddingVector::new(row)?);
            }
        }
        Ok(out)
    }
}

/// Memoizing wrapper keyed by `(provider tag, SHA-256 of text)`, optionally
/// persisted through a [`ResponseCache`]. Only misses reach the inner
/// provider, in one batch per call.
pub struct CachedEmbedder {
    inner: Arc<dyn EmbeddingProvider>,
    memory: Mutex<HashMap<CacheKey, EmbeddingVector>>,
    disk: Option<Arc<ResponseCache>>,
    calls: AtomicU64,
    texts_embedded: AtomicU64,
}

impl CachedEmbedder {
    pub fn new(inner: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            inner,
            memory: Mutex::new(HashMap::new()),
            disk: None,
            calls: AtomicU64::new(0),
            texts_embedded: AtomicU64::new(0),
        }
    }

    pub fn with_disk_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.disk = Some(cache);
        self
    }

    /// Batch calls forwarded to the inner provider.
    pub fn provider_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn texts_embedded(&self) -> u64 {
        self.texts_embedded.load(Ordering::SeqCst)
    }

    fn key(&self, text: &str) -> CacheKey {
        let mut bytes = b"embed\0".to_vec();
        bytes.extend_from_slice(self.inner.tag().as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&Sha256::digest(text.as_bytes()));
        CacheKey::digest(&bytes)
    }

    fn encode(v: &EmbeddingVector) -> String {
        let bytes: Vec<u8> = v.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect();
        hex::encode(bytes)
    }

    fn decode(s: &str) -> Option<EmbeddingVector> {
        let bytes = hex::decode(s.trim()).ok()?;
        if bytes.len() % 4 != 0 {
            return None;
        }
        let vals = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingVector::new(vals).ok()
    }
}

impl EmbeddingProvider for CachedEmbedder {
    fn tag(&self) -> &str {
        self.inner.tag()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let keys: Vec<CacheKey> = texts.iter().map(|t| self.key(t)).collect();
        let mut found: Vec<Option<EmbeddingVector>> = {
            let mem = self.memory.lock().unwrap();
            keys.iter().map(|k| mem.get(k).cloned()).collect()
        };
        if let Some(disk) = &self.disk {
            for (slot, key) in found.iter_mut().zip(&keys) {
                if slot.is_none() {
                    if let Some(rec) = disk.get(key)? {
                        *slot = Self::decode(&rec.payload);
                    }
                }
            }
        }

        // unique missing texts, first occurrence order
        let mut pending: Vec<usize> = Vec::new();
        let mut seen: HashMap<&CacheKey, ()> = HashMap::new();
        for (i, slot) in found.iter().enumerate() {
            if slot.is_none() && seen.insert(&keys[i], ()).is_none() {
                pending.push(i);
            }
        }
        let mut fresh: HashMap<CacheKey, EmbeddingVector> = HashMap::new();
        if !pending.is_empty() {
            let batch: Vec<String> = pending.iter().map(|&i| texts[i].clone()).collect();
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.texts_embedded.fetch_add(batch.len() as u64, Ordering::SeqCst);
            let vecs = self.inner.embed(&batch)?;
            if vecs.len() != batch.len() {
                return Err(EmbeddingError::CountMismatch {
                    requested: batch.len(),
                    returned: vecs.len(),
                });
            }
            for (&i, v) in pending.iter().zip(vecs) {
                if let Some(disk) = &self.disk {
                    disk.put(&keys[i], self.inner.tag(), &Self::encode(&v))?;
                }
                fresh.insert(keys[i].clone(), v);
            }
        }

        let mut mem = self.memory.lock().unwrap();
        let out = found
            .into_iter()
            .zip(&keys)
            .map(|(slot, key)| slot.unwrap_or_else(|| fresh[key].clone()))
            .collect::<Vec<_>>();
        for (key, v) in keys.into_iter().zip(&out) {
            mem.entry(key).or_insert_with(|| v.clone());
        }
        Ok(out)
    }
}
