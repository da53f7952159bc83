//! Per-item records, aggregate summaries and their on-disk form.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{
    aggregate_retrieval, mean_stdev, micro_retrieval, pass_at_k, retrieval_metrics, EvaluateError, RetrievalScore,
    VerdictStatus, BEQ_SLOT, TYPECHECK_SLOT,
};
use crate::decompose::SubQuery;
use crate::formalize::FormalizationAttempt;
use crate::illustrate::{coverage_rate, IllustrationSet};
use crate::retrieve::PremiseSet;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TABLE_FILE: &str = "summary.txt";

const EMPTY_ORACLE_CONVENTION: &str = "recall = 1 for an empty oracle; precision = 0 when nothing is retrieved";

/// A percentage with exactly two decimals, serialized as a string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pct(String);

impl Pct {
    pub fn from_fraction(x: f64) -> Self {
        Self(format!("{:.2}", x * 100.0))
    }

    pub fn value(&self) -> f64 {
        self.0.parse().unwrap_or(f64::NAN)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Pct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

impl Serialize for Pct {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Pct {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse::<f64>().map_err(serde::de::Error::custom)?;
        Ok(Self(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub mode: String,
    pub status: ItemStatus,
    #[serde(default)]
    pub error: Option<String>,
    /// Non-fatal events such as a fallback to monolithic retrieval.
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub subqueries: Option<Vec<SubQuery>>,
    #[serde(default)]
    pub premises: Option<PremiseSet>,
    #[serde(default)]
    pub oracle_premises: Vec<String>,
    #[serde(default)]
    pub retrieval: Option<RetrievalScore>,
    #[serde(default)]
    pub illustrations: Option<IllustrationSet>,
    #[serde(default)]
    pub coverage: Option<f64>,
    #[serde(default)]
    pub prompt_sha256: Option<String>,
    #[serde(default)]
    pub attempts: Vec<FormalizationAttempt>,
}

impl ItemRecord {
    pub fn new(item_id: impl Into<String>, mode: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            mode: mode.into(),
            status: ItemStatus::Ok,
            error: None,
            notes: Vec::new(),
            subqueries: None,
            premises: None,
            oracle_premises: Vec::new(),
            retrieval: None,
            illustrations: None,
            coverage: None,
            prompt_sha256: None,
            attempts: Vec::new(),
        }
    }

    pub fn fail(&mut self, error: impl Into<String>) {
        self.status = ItemStatus::Failed;
        self.error = Some(error.into());
    }

    pub fn is_failed(&self) -> bool {
        self.status == ItemStatus::Failed
    }

    /// Fills the derived `retrieval` and `coverage` fields.
    pub fn score(&mut self) {
        self.retrieval = self.recompute_retrieval();
        self.coverage = self.recompute_coverage();
    }

    fn recompute_retrieval(&self) -> Option<RetrievalScore> {
        let premises = self.premises.as_ref()?;
        Some(retrieval_metrics(
            &premises.id_set(),
            &self.oracle_premises.iter().cloned().collect(),
        ))
    }

    fn recompute_coverage(&self) -> Option<f64> {
        Some(coverage_rate(self.illustrations.as_ref()?, self.premises.as_ref()?))
    }

    fn verdicts(&self, slot: &str) -> Vec<VerdictStatus> {
        self.attempts
            .iter()
            .map(|a| a.verdicts.get(slot).map_or(VerdictStatus::Skipped, |v| v.status))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub ks: Vec<usize>,
    pub averaging: Averaging,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            ks: vec![1],
            averaging: Averaging::Macro,
        }
    }
}

/// Provenance carried into the summary verbatim.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub mode: String,
    pub config: serde_json::Value,
    pub corpus_checksum: Option<String>,
    pub index_checksum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub items: usize,
    pub precision: Pct,
    pub recall: Pct,
    pub f1: Pct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub items: usize,
    pub mean: Pct,
    pub stdev: Pct,
    /// `mean ± stdev`, population standard deviation.
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub value: Pct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub items: usize,
    pub failed_items: Vec<String>,
    pub averaging: Averaging,
    pub empty_oracle_convention: String,
    pub retrieval: Option<RetrievalSummary>,
    pub coverage: Option<CoverageSummary>,
    pub typecheck: Vec<KScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub equivalence: Vec<KScore>,
    pub meta: ReportMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub records: Vec<ItemRecord>,
    pub summary: Summary,
}

fn pass_rate(records: &[ItemRecord], slot: &str, k: usize) -> Result<Pct, EvaluateError> {
    let mut passed = 0usize;
    for r in records {
        if r.is_failed() && r.attempts.len() < k {
            continue;
        }
        let v = r.verdicts(slot);
        match pass_at_k(&v, k) {
            Ok(true) => passed += 1,
            Ok(false) => {}
            Err(EvaluateError::KExceedsAttempts { attempts, .. }) => {
                return Err(EvaluateError::RecordDeficit {
                    item: r.item_id.clone(),
                    k,
                    attempts,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Pct::from_fraction(passed as f64 / records.len().max(1) as f64))
}

/// Recomputes every aggregate from the records alone. Stored per-item
/// scores must agree with their recomputation.
pub fn aggregate_records(
    records: &[ItemRecord],
    meta: &ReportMeta,
    opts: &ReportOptions,
) -> Result<Summary, EvaluateError> {
    let mut scores = Vec::new();
    let mut pairs = Vec::new();
    let mut coverages = Vec::new();
    for r in records {
        let retrieval = r.recompute_retrieval();
        if retrieval != r.retrieval {
            return Err(EvaluateError::SelfCheck(format!(
                "item {:?}: stored retrieval score {:?} differs from recomputed {:?}",
                r.item_id, r.retrieval, retrieval
            )));
        }
        let coverage = r.recompute_coverage();
        if coverage != r.coverage {
            return Err(EvaluateError::SelfCheck(format!(
                "item {:?}: stored coverage {:?} differs from recomputed {:?}",
                r.item_id, r.coverage, coverage
            )));
        }
        if let (Some(s), Some(p)) = (retrieval, &r.premises) {
            scores.push(s);
            pairs.push((p.id_set(), r.oracle_premises.iter().cloned().collect()));
        }
        coverages.extend(coverage);
    }

    let retrieval = if scores.is_empty() {
        None
    } else {
        let s = match opts.averaging {
            Averaging::Macro => aggregate_retrieval(&scores)?,
            Averaging::Micro => micro_retrieval(&pairs.iter().map(|(r, o)| (r, o)).collect::<Vec<_>>())?,
        };
        Some(RetrievalSummary {
            items: scores.len(),
            precision: Pct::from_fraction(s.precision),
            recall: Pct::from_fraction(s.recall),
            f1: Pct::from_fraction(s.f1),
        })
    };

    let coverage = mean_stdev(&coverages).map(|(m, sd)| {
        let (mean, stdev) = (Pct::from_fraction(m), Pct::from_fraction(sd));
        CoverageSummary {
            items: coverages.len(),
            display: format!("{mean} ± {stdev}"),
            mean,
            stdev,
        }
    });

    let mut ks = opts.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let typecheck = ks
        .iter()
        .map(|&k| {
            Ok(KScore {
                k,
                value: pass_rate(records, TYPECHECK_SLOT, k)?,
            })
        })
        .collect::<Result<Vec<_>, EvaluateError>>()?;
    let beq_used = records.iter().flat_map(|r| &r.attempts).any(|a| {
        a.verdicts
            .get(BEQ_SLOT)
            .is_some_and(|v| v.status != VerdictStatus::Skipped)
    });
    let equivalence = if beq_used {
        ks.iter()
            .map(|&k| {
                Ok(KScore {
                    k,
                    value: pass_rate(records, BEQ_SLOT, k)?,
                })
            })
            .collect::<Result<Vec<_>, EvaluateError>>()?
    } else {
        Vec::new()
    };

    Ok(Summary {
        items: records.len(),
        failed_items: records
            .iter()
            .filter(|r| r.is_failed())
            .map(|r| r.item_id.clone())
            .collect(),
        averaging: opts.averaging,
        empty_oracle_convention: EMPTY_ORACLE_CONVENTION.into(),
        retrieval,
        coverage,
        typecheck,
        equivalence,
        meta: meta.clone(),
    })
}

pub fn build_report(
    records: Vec<ItemRecord>,
    meta: ReportMeta,
    opts: &ReportOptions,
) -> Result<RunReport, EvaluateError> {
    let summary = aggregate_records(&records, &meta, opts)?;
    Ok(RunReport { records, summary })
}

pub fn render_table(s: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mode: {}", s.meta.mode);
    let _ = writeln!(out, "items: {} (failed: {})", s.items, s.failed_items.len());
    if let Some(r) = &s.retrieval {
        let avg = match s.averaging {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
        };
        let _ = writeln!(out, "\nretrieval ({avg}, {} items)", r.items);
        let _ = writeln!(out, "  {:>8} {:>8} {:>8}", "P", "R", "F1");
        let _ = writeln!(out, "  {:>8} {:>8} {:>8}", r.precision, r.recall, r.f1);
    }
    if let Some(c) = &s.coverage {
        let _ = writeln!(out, "\ncoverage ({} items): {}", c.items, c.display);
    }
    let mut row = |name: &str, scores: &[KScore]| {
        if scores.is_empty() {
            return;
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "  {}",
            scores
                .iter()
                .map(|k| format!("{:>8}", format!("{name}@{}", k.k)))
                .collect::<Vec<_>>()
                .join(" ")
        );
        let _ = writeln!(
            out,
            "  {}",
            scores
                .iter()
                .map(|k| format!("{:>8}", k.value))
                .collect::<Vec<_>>()
                .join(" ")
        );
    };
    row("TC", &s.typecheck);
    row("BEq+", &s.equivalence);
    out
}

pub fn read_records(path: &Path) -> Result<Vec<ItemRecord>, EvaluateError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvaluateError::Record {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes records, summary and table to `dir`, then re-reads the records and
/// checks that they reproduce the summary exactly.
pub fn write_report(report: &RunReport, dir: &Path, opts: &ReportOptions) -> Result<(), EvaluateError> {
    fs::create_dir_all(dir)?;
    let mut lines = String::new();
    for r in &report.records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    let records_path = dir.join(RECORDS_FILE);
    fs::write(&records_path, lines)?;
    let mut summary = serde_json::to_string_pretty(&report.summary)?;
    summary.push('\n');
    fs::write(dir.join(SUMMARY_FILE), summary)?;
    fs::write(dir.join(TABLE_FILE), render_table(&report.summary))?;

    let reread = read_records(&records_path)?;
    if reread != report.records {
        return Err(EvaluateError::SelfCheck(
            "records do not round-trip through the record file".into(),
        ));
    }
    let again = aggregate_records(&reread, &report.summary.meta, opts)?;
    if again != report.summary {
        return Err(EvaluateError::SelfCheck(format!(
            "aggregates differ after re-reading records:\nwritten: {:?}\nrecomputed: {:?}",
            report.summary, again
        )));
    }
    Ok(())
}
