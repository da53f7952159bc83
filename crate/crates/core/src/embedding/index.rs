use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{dot, norm, EmbeddingError, EmbeddingVector};

/// A ranked search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
}

/// Flat index of unit-normalized vectors addressed by id.
///
/// Immutable once built; search is an exact linear scan.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    provider_tag: String,
    ids: Vec<String>,
    data: Vec<f32>,
    norms: Vec<f64>,
    positions: HashMap<String, usize>,
}

impl PartialEq for VectorIndex {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension
            && self.provider_tag == other.provider_tag
            && self.ids == other.ids
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl VectorIndex {
    pub fn empty(dimension: usize, provider_tag: impl Into<String>) -> Self {
        Self {
            dimension,
            provider_tag: provider_tag.into(),
            ids: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
            positions: HashMap::new(),
        }
    }

    /// Normalizes every vector to unit length and stores it under its id.
    pub fn build(
        ids: Vec<String>,
        vectors: Vec<EmbeddingVector>,
        provider_tag: impl Into<String>,
    ) -> Result<Self, EmbeddingError> {
        if ids.len() != vectors.len() {
            return Err(EmbeddingError::LengthMismatch {
                ids: ids.len(),
                vectors: vectors.len(),
            });
        }
        let dimension = vectors.first().map_or(0, EmbeddingVector::dimension);
        let mut index = Self::empty(dimension, provider_tag);
        index.ids.reserve(ids.len());
        index.data.reserve(ids.len() * dimension);
        for (id, v) in ids.into_iter().zip(vectors) {
            if v.dimension() != dimension {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dimension,
                    found: v.dimension(),
                });
            }
            let unit = v
                .normalized()
                .map_err(|_| EmbeddingError::ZeroVector { id: Some(id.clone()) })?;
            index.push_raw(id, unit.as_slice())?;
        }
        Ok(index)
    }

    /// Appends an already-normalized vector without renormalizing it.
    pub(crate) fn push_raw(&mut self, id: String, values: &[f32]) -> Result<(), EmbeddingError> {
        if values.len() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                found: values.len(),
            });
        }
        if self.positions.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        let n = norm(values);
        if n == 0.0 {
            return Err(EmbeddingError::ZeroVector { id: Some(id) });
        }
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(values);
        self.norms.push(n);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector_at(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.positions.get(id).map(|&i| self.vector_at(i))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), self.vector_at(i)))
    }

    /// Exact top-`k` by descending cosine, ties broken by ascending id.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, EmbeddingError> {
        if k == 0 {
            return Err(EmbeddingError::ZeroK);
        }
        if self.is_empty() {
            return Err(EmbeddingError::EmptyIndex);
        }
        if query.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                found: query.dimension(),
            });
        }
        let q = query.as_slice();
        let qn = norm(q);
        if qn == 0.0 {
            return Err(EmbeddingError::ZeroVector { id: None });
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|i| {
                let s = dot(q, self.vector_at(i)) / (qn * self.norms[i]);
                (s.clamp(-1.0, 1.0), i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, i)| SearchHit {
                id: self.ids[i].clone(),
                score,
            })
            .collect())
    }
}
