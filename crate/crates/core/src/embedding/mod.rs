//! Encoder abstraction, vector index and exact cosine search.

mod index;
mod providers;
mod store;

use thiserror::Error;

use crate::llm::LlmError;

pub use index::{SearchHit, VectorIndex};
pub use providers::{
    CachedEmbedder, EmbeddingProvider, FileEmbeddings, HttpEmbedder, HttpEmbedderConfig, MockEmbedder, MockMode,
};
pub use store::{load_index, read_index, save_index, write_index, INDEX_MAGIC, INDEX_VERSION};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector{}", .id.as_ref().map(|i| format!(" for {i:?}")).unwrap_or_default())]
    ZeroVector { id: Option<String> },
    #[error("non-finite component in vector")]
    NonFinite,
    #[error("{ids} ids but {vectors} vectors")]
    LengthMismatch { ids: usize, vectors: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("provider returned {returned} vectors for {requested} texts")]
    CountMismatch { requested: usize, returned: usize },
    #[error("no precomputed embedding for {0:?}")]
    MissingKey(String),
    #[error("embedding provider: {0}")]
    Provider(#[from] LlmError),
    #[error("embedding cache: {0}")]
    Cache(#[from] crate::llm::CacheError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum IndexFileError {
    #[error("index file io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file truncated")]
    Truncated,
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("index format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("index checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("malformed index file: {0}")]
    Malformed(String),
}

/// A dense embedding. Components are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Unit-length copy; errors on the zero vector.
    pub fn normalized(&self) -> Result<Self, EmbeddingError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbeddingError::ZeroVector { id: None });
        }
        Ok(Self(self.0.iter().map(|&v| (v as f64 / n) as f32).collect()))
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`, accumulated in f64.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector { id: None });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
