//! Retrieval metrics, verifier verdicts, pass@k and run reports.

mod report;
mod verify;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{
    aggregate_records, build_report, read_records, render_table, write_report, Averaging, CoverageSummary, ItemRecord,
    ItemStatus, KScore, Pct, ReportMeta, ReportOptions, RetrievalSummary, RunReport, Summary, RECORDS_FILE,
    SUMMARY_FILE, TABLE_FILE,
};
pub use verify::{
    typecheck, CommandVerifier, EquivalenceChecker, StubVerifier, TypeChecker, Verifier, BEQ_SLOT, TYPECHECK_SLOT,
};

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("cannot aggregate an empty list of scores")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("pass@{k} needs {k} attempts but only {attempts} exist")]
    KExceedsAttempts { k: usize, attempts: usize },
    #[error("item {item:?}: pass@{k} needs {k} attempts but only {attempts} were recorded")]
    RecordDeficit { item: String, k: usize, attempts: usize },
    #[error("verifier binary {0:?} not found")]
    MissingVerifier(String),
    #[error("verifier command is empty")]
    EmptyCommand,
    #[error("report self-check failed: {0}")]
    SelfCheck(String),
    #[error("record file line {line}: {message}")]
    Record { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RetrievalScore {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// P = |R ∩ O| / |R| (0 for empty R), R = |R ∩ O| / |O| (1 for empty O).
pub fn retrieval_metrics(retrieved: &BTreeSet<String>, oracle: &BTreeSet<String>) -> RetrievalScore {
    let hit = retrieved.intersection(oracle).count() as f64;
    let precision = if retrieved.is_empty() {
        0.0
    } else {
        hit / retrieved.len() as f64
    };
    let recall = if oracle.is_empty() {
        1.0
    } else {
        hit / oracle.len() as f64
    };
    RetrievalScore::from_pr(precision, recall)
}

/// Macro average: the mean of each field independently.
pub fn aggregate_retrieval(scores: &[RetrievalScore]) -> Result<RetrievalScore, EvaluateError> {
    if scores.is_empty() {
        return Err(EvaluateError::Empty);
    }
    let n = scores.len() as f64;
    Ok(RetrievalScore {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    })
}

/// Micro average over (retrieved, oracle) pairs: pooled counts, F1 from the
/// pooled P and R.
pub fn micro_retrieval(pairs: &[(&BTreeSet<String>, &BTreeSet<String>)]) -> Result<RetrievalScore, EvaluateError> {
    if pairs.is_empty() {
        return Err(EvaluateError::Empty);
    }
    let (mut hit, mut ret, mut ora) = (0usize, 0usize, 0usize);
    for (r, o) in pairs {
        hit += r.intersection(o).count();
        ret += r.len();
        ora += o.len();
    }
    let precision = if ret == 0 { 0.0 } else { hit as f64 / ret as f64 };
    let recall = if ora == 0 { 1.0 } else { hit as f64 / ora as f64 };
    Ok(RetrievalScore::from_pr(precision, recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Error,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// Wall time, recorded for error verdicts (timeouts included).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Verdict {
    pub fn new(status: VerdictStatus) -> Self {
        Self {
            status,
            duration_ms: None,
            detail: None,
        }
    }

    pub fn pass() -> Self {
        Self::new(VerdictStatus::Pass)
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Self::new(VerdictStatus::Fail).with_detail(detail)
    }

    pub fn error(detail: impl Into<String>) -> Self {
        Self::new(VerdictStatus::Error).with_detail(detail)
    }

    pub fn skipped() -> Self {
        Self::new(VerdictStatus::Skipped)
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        let d = detail.into();
        self.detail = (!d.is_empty()).then_some(d);
        self
    }

    pub fn is_pass(&self) -> bool {
        self.status == VerdictStatus::Pass
    }
}

/// True iff any of the first `k` verdicts passed.
pub fn pass_at_k(verdicts: &[VerdictStatus], k: usize) -> Result<bool, EvaluateError> {
    if k == 0 {
        return Err(EvaluateError::ZeroK);
    }
    if k > verdicts.len() {
        return Err(EvaluateError::KExceedsAttempts {
            k,
            attempts: verdicts.len(),
        });
    }
    Ok(verdicts[..k].contains(&VerdictStatus::Pass))
}

/// Population mean and standard deviation.
pub fn mean_stdev(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
