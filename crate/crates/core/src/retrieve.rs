//! Sub-queries (or a whole statement) → premises, via the vector index.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BenchmarkItem;
use crate::decompose::{serialize_subquery, SubQuerySet};
use crate::embedding::{EmbeddingError, EmbeddingProvider, VectorIndex};
use crate::prompt::TemplateError;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("no sub-queries to retrieve for")]
    NoSubQueries,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Drift,
    Monolithic,
    Oracle,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPremise {
    pub id: String,
    /// Best cosine among the queries that selected this premise.
    pub score: f64,
    /// Indices of the sub-queries that selected it, ascending.
    pub sources: Vec<usize>,
}

/// Deduplicated premises in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiseSet {
    pub mode: RetrievalMode,
    pub premises: Vec<RetrievedPremise>,
}

impl PremiseSet {
    pub fn empty(mode: RetrievalMode) -> Self {
        Self {
            mode,
            premises: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.premises.len()
    }

    pub fn is_empty(&self) -> bool {
        self.premises.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.premises.iter().map(|p| p.id.as_str())
    }

    pub fn id_set(&self) -> BTreeSet<String> {
        self.premises.iter().map(|p| p.id.clone()).collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.premises.iter().any(|p| p.id == id)
    }
}

/// Merges per-query hit lists: first occurrence fixes the position, later
/// occurrences add their source index and raise the score.
fn merge_hits(mode: RetrievalMode, per_query: Vec<Vec<(String, f64)>>) -> PremiseSet {
    let mut out: Vec<RetrievedPremise> = Vec::new();
    let mut pos: HashMap<String, usize> = HashMap::new();
    for (qi, hits) in per_query.into_iter().enumerate() {
        for (id, score) in hits {
            match pos.get(&id) {
                Some(&i) => {
                    let p = &mut out[i];
                    if p.sources.last() != Some(&qi) {
                        p.sources.push(qi);
                    }
                    p.score = p.score.max(score);
                }
                None => {
                    pos.insert(id.clone(), out.len());
                    out.push(RetrievedPremise {
                        id,
                        score,
                        sources: vec![qi],
                    });
                }
            }
        }
    }
    PremiseSet { mode, premises: out }
}

/// Union of the top-`k_per_query` hits of every sub-query (k = 1 by default).
/// All sub-queries are embedded in a single provider call.
pub fn retrieve_drift(
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    sqs: &SubQuerySet,
    template: &str,
    k_per_query: usize,
) -> Result<PremiseSet, RetrieveError> {
    if sqs.is_empty() {
        return Err(RetrieveError::NoSubQueries);
    }
    let texts = sqs
        .items
        .iter()
        .map(|sq| serialize_subquery(sq, template))
        .collect::<Result<Vec<_>, _>>()?;
    let vectors = provider.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(EmbeddingError::CountMismatch {
            requested: texts.len(),
            returned: vectors.len(),
        }
        .into());
    }
    let per_query = vectors
        .iter()
        .map(|v| {
            Ok(index
                .search(v, k_per_query)?
                .into_iter()
                .map(|h| (h.id, h.score))
                .collect())
        })
        .collect::<Result<Vec<_>, EmbeddingError>>()?;
    Ok(merge_hits(RetrievalMode::Drift, per_query))
}

/// Top-`k` for the raw informal statement as a single query.
pub fn retrieve_monolithic(
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    informal: &str,
    k: usize,
) -> Result<PremiseSet, RetrieveError> {
    let vectors = provider.embed(&[informal.to_string()])?;
    let query = vectors.first().ok_or(EmbeddingError::CountMismatch {
        requested: 1,
        returned: 0,
    })?;
    let hits = index.search(query, k)?;
    Ok(merge_hits(
        RetrievalMode::Monolithic,
        vec![hits.into_iter().map(|h| (h.id, h.score)).collect()],
    ))
}

/// Ground-truth dependencies in declaration order, score 1.0 each.
pub fn oracle_premises(item: &BenchmarkItem) -> PremiseSet {
    merge_hits(
        RetrievalMode::Oracle,
        vec![item.oracle_premises.iter().map(|p| (p.clone(), 1.0)).collect()],
    )
}
