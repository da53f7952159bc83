//! Formalization prompt assembly, sampling and statement extraction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Library;
use crate::decompose::SubQuery;
use crate::evaluate::Verdict;
use crate::illustrate::IllustrationSet;
use crate::llm::{CompletionRequest, LlmClient};
use crate::prompt::{fill, Prompt};
use crate::retrieve::PremiseSet;

pub const DEFAULT_SEED_BASE: u64 = 42;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_DECLARATION_KEYWORDS: &[&str] =
    &["theorem", "lemma", "example", "def", "abbrev", "instance", "structure"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormalizeError {
    #[error("{kind} {id:?} is not in the library")]
    MissingObject { kind: &'static str, id: String },
    #[error("at least one sample is required")]
    NoSamples,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseEntry {
    pub id: String,
    pub signature: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremPair {
    pub id: String,
    pub informal: String,
    pub formal: String,
}

/// Everything the formalizer sees, in rendering order: instruction,
/// premises, theorems, sub-queries (parametric mode only), informal
/// statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormalizationContext {
    pub instruction: String,
    pub premises: Vec<PremiseEntry>,
    pub theorems: Vec<TheoremPair>,
    pub subqueries: Vec<SubQuery>,
    pub informal: String,
}

impl FormalizationContext {
    pub fn new(instruction: impl Into<String>, informal: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            premises: Vec::new(),
            theorems: Vec::new(),
            subqueries: Vec::new(),
            informal: informal.into(),
        }
    }

    /// Resolves premise and theorem ids against the library.
    pub fn with_library(
        mut self,
        lib: &Library,
        premises: &PremiseSet,
        theorems: &IllustrationSet,
    ) -> Result<Self, FormalizeError> {
        self.premises = premises
            .ids()
            .map(|id| {
                let o = lib.get(id).ok_or_else(|| FormalizeError::MissingObject {
                    kind: "premise",
                    id: id.to_string(),
                })?;
                Ok(PremiseEntry {
                    id: o.id.clone(),
                    signature: o.signature.clone(),
                    source: o.source.clone(),
                })
            })
            .collect::<Result<_, FormalizeError>>()?;
        self.theorems = theorems
            .theorem_ids()
            .map(|id| {
                let o = lib.get(id).ok_or_else(|| FormalizeError::MissingObject {
                    kind: "theorem",
                    id: id.to_string(),
                })?;
                Ok(TheoremPair {
                    id: o.id.clone(),
                    informal: o.informal_text().unwrap_or_default().to_string(),
                    formal: o.signature.clone(),
                })
            })
            .collect::<Result<_, FormalizeError>>()?;
        Ok(self)
    }

    pub fn with_subqueries(mut self, subqueries: Vec<SubQuery>) -> Self {
        self.subqueries = subqueries;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormalizeTemplates {
    pub system: String,
    pub instruction: String,
    pub premises_header: String,
    /// Placeholders: `{id}`, `{signature}`, `{source}`.
    pub premise_entry: String,
    pub theorems_header: String,
    /// Placeholders: `{id}`, `{informal}`, `{formal}`.
    pub theorem_entry: String,
    pub subqueries_header: String,
    /// Placeholders: `{description}`, `{formal}`.
    pub subquery_entry: String,
    /// Placeholder: `{informal}`.
    pub informal: String,
}

impl Default for FormalizeTemplates {
    fn default() -> Self {
        let t = |s: &str| s.trim_end().to_string();
        Self {
            system: t(include_str!("../assets/prompts/formalize_system.txt")),
            instruction: t(include_str!("../assets/prompts/formalize_instruction.txt")),
            premises_header: t(include_str!("../assets/prompts/formalize_premises_header.txt")),
            premise_entry: t(include_str!("../assets/prompts/formalize_premise_entry.txt")),
            theorems_header: t(include_str!("../assets/prompts/formalize_theorems_header.txt")),
            theorem_entry: t(include_str!("../assets/prompts/formalize_theorem_entry.txt")),
            subqueries_header: t(include_str!("../assets/prompts/formalize_subqueries_header.txt")),
            subquery_entry: t(include_str!("../assets/prompts/formalize_subquery_entry.txt")),
            informal: t(include_str!("../assets/prompts/formalize_informal.txt")),
        }
    }
}

fn section(header: &str, entries: Vec<String>) -> Option<String> {
    (!entries.is_empty()).then(|| format!("{header}\n\n{}", entries.join("\n\n")))
}

/// Renders the context. Empty sections are omitted entirely.
pub fn assemble_prompt(ctx: &FormalizationContext, templates: &FormalizeTemplates) -> Prompt {
    let mut parts = vec![ctx.instruction.trim_end().to_string()];
    parts.extend(section(
        &templates.premises_header,
        ctx.premises
            .iter()
            .map(|p| {
                fill(
                    &templates.premise_entry,
                    &[("id", &p.id), ("signature", &p.signature), ("source", &p.source)],
                )
            })
            .collect(),
    ));
    parts.extend(section(
        &templates.theorems_header,
        ctx.theorems
            .iter()
            .map(|t| {
                fill(
                    &templates.theorem_entry,
                    &[("id", &t.id), ("informal", &t.informal), ("formal", &t.formal)],
                )
            })
            .collect(),
    ));
    parts.extend(section(
        &templates.subqueries_header,
        ctx.subqueries
            .iter()
            .map(|s| {
                fill(
                    &templates.subquery_entry,
                    &[("description", &s.description), ("formal", &s.formal_hint)],
                )
            })
            .collect(),
    ));
    parts.push(fill(&templates.informal, &[("informal", ctx.informal.trim())]));
    Prompt {
        system: templates.system.clone(),
        user: parts.join("\n\n"),
    }
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Contents of the first fenced block; otherwise the first run of lines that
/// starts with a declaration keyword (ended by a blank line); otherwise
/// `None`. The result never contains a fence marker and is never blank.
pub fn extract_formal_statement(raw: &str, keywords: &[&str]) -> Option<String> {
    let lines: Vec<&str> = raw.lines().collect();
    let clean = |body: String| -> Option<String> {
        let cut = body.find("```").map_or(body.as_str(), |i| &body[..i]);
        let t = cut.trim();
        (!t.is_empty()).then(|| t.to_string())
    };
    if let Some(open) = lines.iter().position(|l| is_fence(l)) {
        let body: Vec<&str> = lines[open + 1..].iter().take_while(|l| !is_fence(l)).copied().collect();
        return clean(body.join("\n"));
    }
    let starts_decl = |l: &str| {
        let t = l.trim_start();
        keywords.iter().any(|k| {
            t.strip_prefix(k)
                .is_some_and(|rest| rest.is_empty() || rest.starts_with(char::is_whitespace))
        })
    };
    let start = lines.iter().position(|l| starts_decl(l))?;
    let body: Vec<&str> = lines[start..]
        .iter()
        .take_while(|l| !l.trim().is_empty())
        .copied()
        .collect();
    clean(body.join("\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormalizationAttempt {
    pub seed: u64,
    pub temperature: f64,
    pub raw_output: Option<String>,
    /// Provider failure for this attempt, if any.
    pub error: Option<String>,
    pub formal_statement: Option<String>,
    pub verdicts: BTreeMap<String, Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub model: String,
    pub samples: usize,
    pub seed_base: u64,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub keywords: Vec<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            model: "formalizer".into(),
            samples: 1,
            seed_base: DEFAULT_SEED_BASE,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: None,
            keywords: DEFAULT_DECLARATION_KEYWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Samples `config.samples` independent completions with seeds
/// `seed_base..seed_base + samples`. A failed attempt is recorded with its
/// error and does not affect its siblings.
pub fn formalize(
    llm: &LlmClient,
    prompt: &Prompt,
    config: &SamplingConfig,
) -> Result<Vec<FormalizationAttempt>, FormalizeError> {
    if config.samples == 0 {
        return Err(FormalizeError::NoSamples);
    }
    let keywords: Vec<&str> = config.keywords.iter().map(String::as_str).collect();
    let messages = prompt.messages();
    Ok((0..config.samples as u64)
        .map(|i| {
            let seed = config.seed_base + i;
            let req = CompletionRequest {
                provider_tag: llm.provider_tag().to_string(),
                model: config.model.clone(),
                messages: messages.clone(),
                temperature: config.temperature,
                seed,
                max_tokens: config.max_tokens,
            };
            let (raw_output, error) = match llm.complete(&req) {
                Ok(text) => (Some(text), None),
                Err(e) => (None, Some(e.to_string())),
            };
            FormalizationAttempt {
                seed,
                temperature: config.temperature,
                formal_statement: raw_output
                    .as_deref()
                    .and_then(|r| extract_formal_statement(r, &keywords)),
                raw_output,
                error,
                verdicts: BTreeMap::new(),
            }
        })
        .collect())
}
