//! Selection of illustrative theorems that cover the retrieved premises.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Library, PremiseUsageIndex};
use crate::embedding::{cosine, EmbeddingError, EmbeddingProvider};
use crate::retrieve::PremiseSet;

pub const DEFAULT_BUDGET: usize = 3;

#[derive(Debug, Error)]
pub enum IllustrateError {
    #[error("candidate {0:?} has no informal statement")]
    MissingInformal(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// A library theorem that uses at least one retrieved premise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub theorem_id: String,
    /// Similarity of the theorem's informal statement to the item's; 0.0
    /// until ranked.
    pub similarity: f64,
    /// The theorem's premises that are in the retrieved set.
    pub usable_premises: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub theorem_id: String,
    pub newly_covered: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IllustrationSet {
    pub budget: usize,
    pub selected: Vec<Selection>,
    pub covered: BTreeSet<String>,
}

impl IllustrationSet {
    pub fn empty(budget: usize) -> Self {
        Self {
            budget,
            selected: Vec::new(),
            covered: BTreeSet::new(),
        }
    }

    pub fn theorem_ids(&self) -> impl Iterator<Item = &str> {
        self.selected.iter().map(|s| s.theorem_id.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Theorems using any retrieved premise, in ascending id order. The item's
/// own theorem (`exclude`) and theorems without informal text are dropped.
pub fn compile_candidates(
    usage: &PremiseUsageIndex,
    premises: &PremiseSet,
    lib: &Library,
    exclude: Option<&str>,
) -> Vec<Candidate> {
    let retrieved = premises.id_set();
    let ids: BTreeSet<&str> = retrieved.iter().flat_map(|p| usage.users(p)).collect();
    ids.into_iter()
        .filter(|id| Some(*id) != exclude)
        .filter_map(|id| lib.get(id))
        .filter(|t| t.is_theorem() && t.informal_text().is_some())
        .map(|t| Candidate {
            theorem_id: t.id.clone(),
            similarity: 0.0,
            usable_premises: t.premises.intersection(&retrieved).cloned().collect(),
        })
        .filter(|c| !c.usable_premises.is_empty())
        .collect()
}

/// Scores each candidate by the cosine between its informal statement and
/// the item's, then sorts by descending score, ascending id on ties.
pub fn rank_candidates(
    mut cands: Vec<Candidate>,
    item_informal: &str,
    provider: &dyn EmbeddingProvider,
    lib: &Library,
) -> Result<Vec<Candidate>, IllustrateError> {
    if cands.is_empty() {
        return Ok(cands);
    }
    let mut texts = Vec::with_capacity(cands.len() + 1);
    texts.push(item_informal.to_string());
    for c in &cands {
        let text = lib
            .get(&c.theorem_id)
            .and_then(|t| t.informal_text())
            .ok_or_else(|| IllustrateError::MissingInformal(c.theorem_id.clone()))?;
        texts.push(text.to_string());
    }
    let vectors = provider.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(EmbeddingError::CountMismatch {
            requested: texts.len(),
            returned: vectors.len(),
        }
        .into());
    }
    let (query, rest) = vectors.split_first().expect("non-empty");
    for (c, v) in cands.iter_mut().zip(rest) {
        c.similarity = cosine(v, query)?;
    }
    sort_candidates(&mut cands);
    Ok(cands)
}

pub fn sort_candidates(cands: &mut [Candidate]) {
    cands.sort_by(|a, b| match b.similarity.total_cmp(&a.similarity) {
        Ordering::Equal => a.theorem_id.cmp(&b.theorem_id),
        o => o,
    });
}

/// Greedy maximum coverage over the retrieved premises.
///
/// Each step picks the candidate with the most not-yet-covered retrieved
/// premises, the earliest in `sorted_cands` on ties. Stops at `budget` picks
/// or when the best gain is zero.
pub fn select_greedy(sorted_cands: &[Candidate], premises: &PremiseSet, budget: usize) -> IllustrationSet {
    let retrieved = premises.id_set();
    let mut out = IllustrationSet::empty(budget);
    let mut taken = vec![false; sorted_cands.len()];
    while out.selected.len() < budget {
        let mut best: Option<(usize, usize)> = None;
        for (i, c) in sorted_cands.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let gain = c
                .usable_premises
                .iter()
                .filter(|p| retrieved.contains(*p) && !out.covered.contains(*p))
                .count();
            if gain > best.map_or(0, |(_, g)| g) {
                best = Some((i, gain));
            }
        }
        let Some((i, _)) = best else { break };
        taken[i] = true;
        let newly: BTreeSet<String> = sorted_cands[i]
            .usable_premises
            .iter()
            .filter(|p| retrieved.contains(*p) && !out.covered.contains(*p))
            .cloned()
            .collect();
        out.covered.extend(newly.iter().cloned());
        out.selected.push(Selection {
            theorem_id: sorted_cands[i].theorem_id.clone(),
            newly_covered: newly,
        });
    }
    out
}

/// Fraction of retrieved premises covered; 1.0 when nothing was retrieved.
pub fn coverage_rate(ill: &IllustrationSet, premises: &PremiseSet) -> f64 {
    let retrieved = premises.id_set();
    if retrieved.is_empty() {
        return 1.0;
    }
    ill.covered.intersection(&retrieved).count() as f64 / retrieved.len() as f64
}
