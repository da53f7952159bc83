//! End-to-end runs: index building and per-item processing.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, Providers, RunConfig, RunMode};
use crate::corpus::{
    invert_dependencies, load_benchmark, load_library, BenchmarkItem, CorpusError, FormalObject, Library,
    PremiseUsageIndex,
};
use crate::decompose::{
    decompose, default_exemplars, load_exemplars, DecomposeConfig, DecomposeError, DecomposeTemplates, Exemplar,
};
use crate::embedding::{
    load_index, save_index, EmbeddingError, EmbeddingProvider, FileEmbeddings, IndexFileError, VectorIndex,
};
use crate::evaluate::{
    aggregate_records, build_report, read_records, write_report, Averaging, EvaluateError, ItemRecord, ReportMeta,
    ReportOptions, RunReport, Summary, Verdict, BEQ_SLOT, SUMMARY_FILE, TYPECHECK_SLOT,
};
use crate::formalize::{assemble_prompt, formalize, FormalizationContext, FormalizeTemplates, SamplingConfig};
use crate::illustrate::{compile_candidates, rank_candidates, select_greedy};
use crate::prompt::fill;
use crate::retrieve::{oracle_premises, retrieve_drift, retrieve_monolithic, PremiseSet, RetrievalMode};

pub const PROMPTS_DIR: &str = "prompts";
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

const EMBED_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("index file: {0}")]
    Index(#[from] IndexFileError),
    #[error("embedding: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn file_sha256(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Text embedded for one library object.
pub fn object_text(obj: &FormalObject, template: &str) -> String {
    fill(
        template,
        &[
            ("id", &obj.id),
            ("signature", &obj.signature),
            ("informal", obj.informal.as_deref().unwrap_or("")),
            ("source", &obj.source),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSummary {
    pub path: PathBuf,
    pub count: usize,
    pub dimension: usize,
    pub checksum: String,
}

/// Embeds every library object (or takes its precomputed vector) and
/// persists the index.
pub fn build_index(
    lib: &Library,
    embedder: &dyn EmbeddingProvider,
    object_template: &str,
    precomputed: Option<&Path>,
) -> Result<VectorIndex, PipelineError> {
    let ids: Vec<String> = lib.objects().map(|o| o.id.clone()).collect();
    let vectors = match precomputed {
        Some(path) => {
            let file = FileEmbeddings::load(path, embedder.tag())?;
            ids.iter()
                .map(|id| {
                    file.get(id)
                        .cloned()
                        .ok_or_else(|| EmbeddingError::MissingKey(id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => {
            let texts: Vec<String> = lib.objects().map(|o| object_text(o, object_template)).collect();
            let mut out = Vec::with_capacity(texts.len());
            for chunk in texts.chunks(EMBED_CHUNK) {
                let got = embedder.embed(chunk)?;
                if got.len() != chunk.len() {
                    return Err(EmbeddingError::CountMismatch {
                        requested: chunk.len(),
                        returned: got.len(),
                    }
                    .into());
                }
                out.extend(got);
            }
            out
        }
    };
    Ok(VectorIndex::build(ids, vectors, embedder.tag())?)
}

pub fn cmd_index(cfg: &RunConfig, embedder: &dyn EmbeddingProvider) -> Result<IndexSummary, PipelineError> {
    let path = cfg
        .index
        .clone()
        .ok_or_else(|| ConfigError::Invalid("no index path configured".into()))?;
    let lib = load_library(&cfg.corpus)?;
    let index = build_index(&lib, embedder, &cfg.object_template, cfg.index_embeddings.as_deref())?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_index(&index, &path)?;
    Ok(IndexSummary {
        checksum: file_sha256(&path)?,
        count: index.len(),
        dimension: index.dimension(),
        path,
    })
}

/// File name for an item's prompt: unsafe characters become `_`.
pub fn prompt_file_name(item_id: &str) -> String {
    let safe: String = item_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.txt")
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    providers: &'a Providers,
    lib: &'a Library,
    usage: &'a PremiseUsageIndex,
    index: Option<&'a VectorIndex>,
    exemplars: &'a [Exemplar],
    decompose_templates: DecomposeTemplates,
    formalize_templates: FormalizeTemplates,
}

impl Runner<'_> {
    fn process(&self, item: &BenchmarkItem) -> (ItemRecord, Option<String>) {
        let mut rec = ItemRecord::new(&item.item_id, self.cfg.mode.as_str());
        rec.oracle_premises = item.oracle_premises.clone();
        let prompt = match self.run_item(item, &mut rec) {
            Ok(p) => Some(p),
            Err(e) => {
                rec.fail(e);
                None
            }
        };
        rec.score();
        (rec, prompt)
    }

    fn index(&self) -> Result<&VectorIndex, String> {
        self.index.ok_or_else(|| "no index loaded".to_string())
    }

    fn run_item(&self, item: &BenchmarkItem, rec: &mut ItemRecord) -> Result<String, String> {
        let cfg = self.cfg;
        let p = self.providers;
        let embedder = p.embedder.as_ref();

        let subqueries = if cfg.mode.decomposes() {
            let dcfg = DecomposeConfig {
                model: cfg.decomposer.model().to_string(),
                temperature: cfg.temperature,
                seed: cfg.decomposition.seed,
                max_tokens: cfg.decomposer.max_tokens(),
                cap: cfg.decomposition.cap,
                repair_attempts: cfg.decomposition.repair_attempts,
            };
            match decompose(&p.decomposer, item, self.exemplars, &self.decompose_templates, &dcfg) {
                Ok(s) => {
                    rec.subqueries = Some(s.items.clone());
                    Some(s)
                }
                Err(DecomposeError::RepairsExhausted { attempts, .. }) if cfg.mode == RunMode::Drift => {
                    rec.notes.push(format!(
                        "decomposition unparsable after {attempts} attempts; fell back to monolithic retrieval"
                    ));
                    None
                }
                Err(e) => return Err(format!("decompose: {e}")),
            }
        } else {
            None
        };

        let premises = match cfg.mode {
            RunMode::Drift => Some(match &subqueries {
                Some(s) => retrieve_drift(self.index()?, embedder, s, &cfg.subquery_template, cfg.k_per_query),
                None => retrieve_monolithic(self.index()?, embedder, &item.informal, cfg.k),
            }),
            RunMode::Monolithic => Some(retrieve_monolithic(self.index()?, embedder, &item.informal, cfg.k)),
            RunMode::Oracle => Some(Ok(oracle_premises(item))),
            RunMode::ZeroShot | RunMode::Parametric => None,
        }
        .transpose()
        .map_err(|e| format!("retrieve: {e}"))?;
        rec.premises = premises.clone();

        if let (true, Some(prem)) = (cfg.illustrates(), &premises) {
            let exclude = cfg.exclude_self.then_some(item.item_id.as_str());
            let cands = compile_candidates(self.usage, prem, self.lib, exclude);
            let ranked =
                rank_candidates(cands, &item.informal, embedder, self.lib).map_err(|e| format!("illustrate: {e}"))?;
            rec.illustrations = Some(select_greedy(&ranked, prem, cfg.m));
        }

        let t = &self.formalize_templates;
        let mut ctx = FormalizationContext::new(t.instruction.clone(), item.informal.clone());
        let empty = PremiseSet::empty(RetrievalMode::None);
        let no_ill = crate::illustrate::IllustrationSet::empty(cfg.m);
        ctx = ctx
            .with_library(
                self.lib,
                premises.as_ref().unwrap_or(&empty),
                rec.illustrations.as_ref().unwrap_or(&no_ill),
            )
            .map_err(|e| format!("formalize: {e}"))?;
        if cfg.mode == RunMode::Parametric {
            ctx = ctx.with_subqueries(subqueries.map(|s| s.items).unwrap_or_default());
        }
        let prompt = assemble_prompt(&ctx, t);
        let text = prompt.to_string();
        rec.prompt_sha256 = Some(hex::encode(Sha256::digest(text.as_bytes())));

        let sampling = SamplingConfig {
            model: cfg.formalizer.model().to_string(),
            samples: cfg.samples,
            seed_base: cfg.seed_base,
            temperature: cfg.temperature,
            max_tokens: cfg.formalizer.max_tokens(),
            keywords: cfg.keywords.clone(),
        };
        let mut attempts = formalize(&p.formalizer, &prompt, &sampling).map_err(|e| format!("formalize: {e}"))?;
        let header = item.header.as_deref();
        for a in &mut attempts {
            let tc = match &p.checker {
                Some(c) => c.check(a, header),
                None => Verdict::skipped(),
            };
            a.verdicts.insert(TYPECHECK_SLOT.into(), tc);
            let beq = match &p.equivalence {
                Some(eq) => eq.check(a, item.reference_formal.as_deref(), header),
                None => Verdict::skipped(),
            };
            a.verdicts.insert(BEQ_SLOT.into(), beq);
        }
        rec.attempts = attempts;
        Ok(text)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub output: PathBuf,
}

impl RunOutcome {
    pub fn failed(&self) -> usize {
        self.report.summary.failed_items.len()
    }

    pub fn all_failed(&self) -> bool {
        self.report.summary.items > 0 && self.failed() == self.report.summary.items
    }
}

/// Runs every benchmark item with the given providers and writes the report,
/// the prompts and the resolved configuration to the output directory.
pub fn run_with(cfg: &RunConfig, providers: &Providers) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let lib = load_library(&cfg.corpus)?;
    let items = load_benchmark(&cfg.benchmark)?;
    let usage = invert_dependencies(&lib);
    let index = match (&cfg.index, cfg.mode.needs_index()) {
        (Some(path), true) => {
            let idx = load_index(path)?;
            if idx.provider_tag() != providers.embedder.tag() {
                return Err(ConfigError::Invalid(format!(
                    "index was built with {:?} but the embedder is {:?}",
                    idx.provider_tag(),
                    providers.embedder.tag()
                ))
                .into());
            }
            Some((idx, file_sha256(path)?))
        }
        _ => None,
    };
    let exemplars = if cfg.mode.decomposes() {
        match &cfg.decomposition.exemplars {
            Some(p) => load_exemplars(p)?,
            None => default_exemplars(),
        }
    } else {
        Vec::new()
    };

    let runner = Runner {
        cfg,
        providers,
        lib: &lib,
        usage: &usage,
        index: index.as_ref().map(|(i, _)| i),
        exemplars: &exemplars,
        decompose_templates: DecomposeTemplates::default(),
        formalize_templates: FormalizeTemplates::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("worker pool: {e}")))?;
    let results: Vec<(ItemRecord, Option<String>)> =
        pool.install(|| items.par_iter().map(|it| runner.process(it)).collect());

    let out = &cfg.output;
    let prompts_dir = out.join(PROMPTS_DIR);
    fs::create_dir_all(&prompts_dir).map_err(io_err(&prompts_dir))?;
    for (rec, prompt) in &results {
        if let Some(text) = prompt {
            let path = prompts_dir.join(prompt_file_name(&rec.item_id));
            fs::write(&path, text).map_err(io_err(&path))?;
        }
    }
    let config_path = out.join(RESOLVED_CONFIG_FILE);
    fs::write(&config_path, cfg.to_toml()).map_err(io_err(&config_path))?;

    let meta = ReportMeta {
        mode: cfg.mode.as_str().into(),
        config: serde_json::to_value(cfg).expect("configuration serializes"),
        corpus_checksum: Some(lib.checksum()),
        index_checksum: index.map(|(_, c)| c),
    };
    let opts = ReportOptions {
        ks: cfg.report_ks(),
        averaging: cfg.averaging,
    };
    let report = build_report(results.into_iter().map(|(r, _)| r).collect(), meta, &opts)?;
    write_report(&report, out, &opts)?;
    Ok(RunOutcome {
        report,
        output: out.clone(),
    })
}

/// Re-aggregates an existing record file for the requested pass@k values.
/// Provenance is taken from a `summary.json` next to the records, if any.
pub fn cmd_eval(records_path: &Path, ks: &[usize], averaging: Averaging) -> Result<Summary, PipelineError> {
    let records = read_records(records_path)?;
    let summary_path = records_path.with_file_name(SUMMARY_FILE);
    let meta = match fs::read_to_string(&summary_path) {
        Ok(text) => serde_json::from_str::<Summary>(&text)
            .map(|s| s.meta)
            .map_err(EvaluateError::Json)?,
        Err(_) => ReportMeta::default(),
    };
    let opts = ReportOptions {
        ks: ks.to_vec(),
        averaging,
    };
    Ok(aggregate_records(&records, &meta, &opts)?)
}

pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let providers = Providers::from_config(cfg)?;
    run_with(cfg, &providers)
}
