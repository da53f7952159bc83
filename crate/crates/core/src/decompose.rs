//! Informal statement → sub-queries, via a few-shot LLM prompt.
//!
//! The model answers with one fenced block of line records:
//!
//! ```text
//! ```subqueries
//! concept: a prime number p of the form 4t + 3
//! formal: Nat.Prime p ∧ p % 4 = 3
//!
//! concept: the ring of integers modulo p
//! formal: ZMod p
//! ```
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BenchmarkItem;
use crate::llm::{CompletionRequest, LlmClient, LlmError};
use crate::prompt::{fill, has_placeholder, Prompt, TemplateError};

pub const DEFAULT_SUBQUERY_CAP: usize = 16;
pub const DEFAULT_SUBQUERY_TEMPLATE: &str = "{description}\nFormal: {formal}";

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("at least one few-shot exemplar is required")]
    NoExemplars,
    #[error("cannot read exemplars: {0}")]
    Exemplars(String),
    #[error("no parsable sub-query block in decomposer output")]
    Parse { raw: String },
    #[error("decomposer output unparsable after {attempts} attempts")]
    RepairsExhausted { attempts: usize, raw: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// One decomposed concept: a description and a predicted formal rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuery {
    pub description: String,
    #[serde(default)]
    pub formal_hint: String,
}

impl SubQuery {
    pub fn new(description: impl Into<String>, formal_hint: impl Into<String>) -> Self {
        Self {
            description: description.into(),
            formal_hint: formal_hint.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuerySet {
    pub items: Vec<SubQuery>,
    pub source_item: String,
    pub decomposer_tag: String,
}

impl SubQuerySet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarSubQuery {
    pub concept: String,
    pub formal: String,
}

/// A worked decomposition shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    #[serde(default)]
    pub name: Option<String>,
    pub informal: String,
    pub subqueries: Vec<ExemplarSubQuery>,
}

impl Exemplar {
    fn as_subqueries(&self) -> Vec<SubQuery> {
        self.subqueries
            .iter()
            .map(|s| SubQuery::new(s.concept.clone(), s.formal.clone()))
            .collect()
    }
}

pub fn parse_exemplars(text: &str) -> Result<Vec<Exemplar>, DecomposeError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| DecomposeError::Exemplars(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn load_exemplars(path: &Path) -> Result<Vec<Exemplar>, DecomposeError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| DecomposeError::Exemplars(format!("{}: {e}", path.display())))?;
    parse_exemplars(&text)
}

/// The bundled five-problem exemplar set.
pub fn default_exemplars() -> Vec<Exemplar> {
    parse_exemplars(include_str!("../assets/decompose_exemplars.jsonl")).expect("bundled exemplars parse")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecomposeTemplates {
    pub system: String,
    /// Placeholders: `{exemplars}`, `{informal}`.
    pub user: String,
    /// Placeholders: `{informal}`, `{decomposition}`.
    pub exemplar: String,
    /// Appended to the user message on a repair attempt.
    pub reminder: String,
}

impl Default for DecomposeTemplates {
    fn default() -> Self {
        Self {
            system: include_str!("../assets/prompts/decompose_system.txt")
                .trim_end()
                .to_string(),
            user: include_str!("../assets/prompts/decompose_user.txt")
                .trim_end()
                .to_string(),
            exemplar: include_str!("../assets/prompts/decompose_exemplar.txt")
                .trim_end()
                .to_string(),
            reminder: include_str!("../assets/prompts/decompose_reminder.txt")
                .trim_end()
                .to_string(),
        }
    }
}

/// Renders sub-queries in the canonical fenced output format.
pub fn render_subqueries(items: &[SubQuery]) -> String {
    let body = items
        .iter()
        .map(|s| format!("concept: {}\nformal: {}", s.description, s.formal_hint))
        .collect::<Vec<_>>()
        .join("\n\n");
    format!("```subqueries\n{body}\n```")
}

pub fn build_decomposition_prompt(
    item: &BenchmarkItem,
    few_shots: &[Exemplar],
    templates: &DecomposeTemplates,
) -> Result<Prompt, DecomposeError> {
    if few_shots.is_empty() {
        return Err(DecomposeError::NoExemplars);
    }
    let shots = few_shots
        .iter()
        .map(|ex| {
            let block = render_subqueries(&ex.as_subqueries());
            fill(
                &templates.exemplar,
                &[("informal", ex.informal.trim()), ("decomposition", &block)],
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(Prompt {
        system: templates.system.clone(),
        user: fill(
            &templates.user,
            &[("exemplars", &shots), ("informal", item.informal.trim())],
        ),
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Concept,
    Formal,
}

fn split_key(line: &str) -> Option<(Field, &str)> {
    let l = line.trim_start();
    let l = l.strip_prefix("- ").or_else(|| l.strip_prefix("* ")).unwrap_or(l);
    let (key, value) = l.split_once(':')?;
    match key.trim().to_ascii_lowercase().as_str() {
        "concept" => Some((Field::Concept, value)),
        "formal" => Some((Field::Formal, value)),
        _ => None,
    }
}

fn parse_block(lines: &[&str]) -> Vec<SubQuery> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut last: Option<Field> = None;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        match split_key(line) {
            Some((Field::Concept, v)) => {
                out.push((v.to_string(), String::new()));
                last = Some(Field::Concept);
            }
            Some((Field::Formal, v)) => {
                match out.last_mut() {
                    Some(rec) if rec.1.is_empty() => rec.1 = v.to_string(),
                    _ => out.push((String::new(), v.to_string())),
                }
                last = Some(Field::Formal);
            }
            None => {
                if let (Some(rec), Some(field)) = (out.last_mut(), last) {
                    let target = if field == Field::Concept {
                        &mut rec.0
                    } else {
                        &mut rec.1
                    };
                    target.push('\n');
                    target.push_str(line);
                }
            }
        }
    }
    out.into_iter()
        .map(|(d, f)| SubQuery::new(d.trim(), f.trim()))
        .filter(|s| !s.description.is_empty())
        .collect()
}

/// Extracts sub-queries from the first fenced block that holds at least one
/// record. Entries with an empty description are dropped; at most `cap`
/// entries are kept.
pub fn parse_decomposition(raw: &str, cap: usize) -> Result<Vec<SubQuery>, DecomposeError> {
    let lines: Vec<&str> = raw.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim_start().starts_with("```") {
            let start = i + 1;
            let mut end = start;
            while end < lines.len() && !lines[end].trim_start().starts_with("```") {
                end += 1;
            }
            let mut items = parse_block(&lines[start..end]);
            if !items.is_empty() {
                items.truncate(cap);
                return Ok(items);
            }
            i = end + 1;
        } else {
            i += 1;
        }
    }
    Err(DecomposeError::Parse { raw: raw.to_string() })
}

/// Flattens a sub-query into retriever query text. `{description}`/`{d}` and
/// `{formal}`/`{f}` are the placeholders; an empty hint yields the
/// description alone.
pub fn serialize_subquery(sq: &SubQuery, template: &str) -> Result<String, TemplateError> {
    validate_subquery_template(template)?;
    if sq.formal_hint.trim().is_empty() {
        return Ok(sq.description.clone());
    }
    Ok(fill(
        template,
        &[
            ("description", &sq.description),
            ("d", &sq.description),
            ("formal", &sq.formal_hint),
            ("f", &sq.formal_hint),
        ],
    ))
}

pub fn validate_subquery_template(template: &str) -> Result<(), TemplateError> {
    if !(has_placeholder(template, "description") || has_placeholder(template, "d")) {
        return Err(TemplateError::MissingPlaceholder("description".into()));
    }
    if !(has_placeholder(template, "formal") || has_placeholder(template, "f")) {
        return Err(TemplateError::MissingPlaceholder("formal".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    pub model: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: Option<u32>,
    pub cap: usize,
    pub repair_attempts: usize,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            model: "decomposer".into(),
            temperature: 0.7,
            seed: 42,
            max_tokens: None,
            cap: DEFAULT_SUBQUERY_CAP,
            repair_attempts: 1,
        }
    }
}

/// Prompt → completion → parse, retrying with a format reminder on parse
/// failure up to `repair_attempts` times.
pub fn decompose(
    llm: &LlmClient,
    item: &BenchmarkItem,
    exemplars: &[Exemplar],
    templates: &DecomposeTemplates,
    config: &DecomposeConfig,
) -> Result<SubQuerySet, DecomposeError> {
    let prompt = build_decomposition_prompt(item, exemplars, templates)?;
    let mut last_raw = String::new();
    for attempt in 0..=config.repair_attempts {
        let mut p = prompt.clone();
        if attempt > 0 {
            p.user = format!("{}\n\n{}", p.user, templates.reminder);
        }
        let req = CompletionRequest {
            provider_tag: llm.provider_tag().to_string(),
            model: config.model.clone(),
            messages: p.messages(),
            temperature: config.temperature,
            seed: config.seed,
            max_tokens: config.max_tokens,
        };
        let raw = llm.complete(&req)?;
        match parse_decomposition(&raw, config.cap) {
            Ok(items) => {
                return Ok(SubQuerySet {
                    items,
                    source_item: item.item_id.clone(),
                    decomposer_tag: format!("{}/{}", llm.provider_tag(), config.model),
                })
            }
            Err(_) => last_raw = raw,
        }
    }
    Err(DecomposeError::RepairsExhausted {
        attempts: config.repair_attempts + 1,
        raw: last_raw,
    })
}
