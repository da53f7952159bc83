//! Declarative run configuration and the providers it describes.

use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{validate_subquery_template, DEFAULT_SUBQUERY_CAP, DEFAULT_SUBQUERY_TEMPLATE};
use crate::embedding::{
    CachedEmbedder, EmbeddingProvider, FileEmbeddings, HttpEmbedder, HttpEmbedderConfig, MockEmbedder, MockMode,
};
use crate::evaluate::{Averaging, CommandVerifier, EquivalenceChecker, StubVerifier, TypeChecker, Verifier};
use crate::formalize::DEFAULT_DECLARATION_KEYWORDS;
use crate::illustrate::DEFAULT_BUDGET;
use crate::llm::{
    ChatProvider, HttpChatConfig, HttpChatProvider, LlmClient, RateLimiter, ResponseCache, RetryPolicy, StubProvider,
    SystemClock,
};

pub const DEFAULT_OBJECT_TEMPLATE: &str = "{id}\n{signature}";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Decompose, retrieve per sub-query, illustrate, formalize.
    Drift,
    /// Top-k retrieval for the whole informal statement.
    Monolithic,
    /// Informal statement only.
    ZeroShot,
    /// Ground-truth dependencies as the premise set.
    Oracle,
    /// Sub-queries rendered directly, no retrieval.
    Parametric,
}

impl RunMode {
    pub const ALL: [RunMode; 5] = [
        RunMode::Drift,
        RunMode::Monolithic,
        RunMode::ZeroShot,
        RunMode::Oracle,
        RunMode::Parametric,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Drift => "drift",
            RunMode::Monolithic => "monolithic",
            RunMode::ZeroShot => "zero_shot",
            RunMode::Oracle => "oracle",
            RunMode::Parametric => "parametric",
        }
    }

    pub fn decomposes(self) -> bool {
        matches!(self, RunMode::Drift | RunMode::Parametric)
    }

    pub fn needs_index(self) -> bool {
        matches!(self, RunMode::Drift | RunMode::Monolithic)
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('_', "-") == s)
            .ok_or_else(|| {
                format!("unknown mode {s:?}; expected one of drift, monolithic, zero_shot, oracle, parametric")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Mock {
        dimension: usize,
        #[serde(default = "default_mock_mode")]
        mode: MockMode,
    },
    /// Precomputed query vectors keyed by the exact query text.
    File {
        path: PathBuf,
        tag: String,
    },
    Http(HttpEmbedderConfig),
}

fn default_mock_mode() -> MockMode {
    MockMode::Tokens
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Mock {
            dimension: 64,
            mode: MockMode::Tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateLimitConfig {
    pub requests: usize,
    #[serde(default = "default_interval")]
    pub interval_secs: f64,
}

fn default_interval() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LlmConfig {
    /// Offline rule script, one JSON rule per line.
    Stub {
        script: PathBuf,
        #[serde(default = "default_stub_model")]
        model: String,
    },
    /// OpenAI-compatible chat-completions endpoint.
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default = "default_llm_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_llm_retries")]
        max_retries: u32,
        #[serde(default)]
        rate_limit: Option<RateLimitConfig>,
        #[serde(default)]
        max_tokens: Option<u32>,
    },
}

fn default_stub_model() -> String {
    "stub".into()
}
fn default_llm_timeout() -> u64 {
    120
}
fn default_llm_retries() -> u32 {
    3
}

impl LlmConfig {
    pub fn model(&self) -> &str {
        match self {
            LlmConfig::Stub { model, .. } | LlmConfig::Http { model, .. } => model,
        }
    }

    pub fn max_tokens(&self) -> Option<u32> {
        match self {
            LlmConfig::Stub { .. } => None,
            LlmConfig::Http { max_tokens, .. } => *max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandConfig {
    pub argv: Vec<String>,
    #[serde(default = "default_verify_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_extension")]
    pub extension: String,
}

fn default_verify_timeout() -> u64 {
    120
}
fn default_extension() -> String {
    "lean".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VerifierConfig {
    /// Every attempt gets a skipped type-check verdict.
    #[default]
    None,
    /// Accepts statements containing `needle`.
    Stub {
        #[serde(default = "default_needle")]
        needle: String,
    },
    Command(CommandConfig),
}

fn default_needle() -> String {
    "theorem".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposerSettings {
    #[serde(default)]
    pub exemplars: Option<PathBuf>,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default = "default_repairs")]
    pub repair_attempts: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_cap() -> usize {
    DEFAULT_SUBQUERY_CAP
}
fn default_repairs() -> usize {
    1
}

impl Default for DecomposerSettings {
    fn default() -> Self {
        Self {
            exemplars: None,
            cap: DEFAULT_SUBQUERY_CAP,
            repair_attempts: 1,
            seed: 42,
        }
    }
}

fn default_m() -> usize {
    DEFAULT_BUDGET
}
fn default_k() -> usize {
    5
}
fn default_one() -> usize {
    1
}
fn default_seed() -> u64 {
    42
}
fn default_temperature() -> f64 {
    0.7
}
fn default_workers() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_object_template() -> String {
    DEFAULT_OBJECT_TEMPLATE.into()
}
fn default_subquery_template() -> String {
    DEFAULT_SUBQUERY_TEMPLATE.into()
}
fn default_keywords() -> Vec<String> {
    DEFAULT_DECLARATION_KEYWORDS.iter().map(|s| s.to_string()).collect()
}
fn default_decomposer() -> LlmConfig {
    LlmConfig::Stub {
        script: PathBuf::from("decomposer.jsonl"),
        model: default_stub_model(),
    }
}
fn default_formalizer() -> LlmConfig {
    LlmConfig::Stub {
        script: PathBuf::from("formalizer.jsonl"),
        model: default_stub_model(),
    }
}

/// One experiment. Relative paths are resolved against the directory of the
/// file the configuration was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub benchmark: PathBuf,
    #[serde(default)]
    pub index: Option<PathBuf>,
    pub output: PathBuf,
    pub mode: RunMode,
    #[serde(default)]
    pub no_illustrate: bool,
    /// Adds illustrative theorems to oracle-mode prompts.
    #[serde(default)]
    pub oracle_with_illustrations: bool,
    /// Illustration budget.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Monolithic top-k.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Hits kept per sub-query in drift mode.
    #[serde(default = "default_one")]
    pub k_per_query: usize,
    #[serde(default = "default_one")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed_base: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// pass@k values to report; defaults to 1 and `samples`.
    #[serde(default)]
    pub eval_k: Vec<usize>,
    #[serde(default)]
    pub averaging: Averaging,
    /// Drops the candidate whose id equals the benchmark item id.
    #[serde(default = "default_true")]
    pub exclude_self: bool,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Object text embedded for the index. Placeholders: `{id}`,
    /// `{signature}`, `{informal}`, `{source}`.
    #[serde(default = "default_object_template")]
    pub object_template: String,
    #[serde(default = "default_subquery_template")]
    pub subquery_template: String,
    /// Precomputed object vectors keyed by object id, used by `index`
    /// instead of the embedder.
    #[serde(default)]
    pub index_embeddings: Option<PathBuf>,
    #[serde(default = "default_keywords")]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default = "default_decomposer")]
    pub decomposer: LlmConfig,
    #[serde(default)]
    pub decomposition: DecomposerSettings,
    #[serde(default = "default_formalizer")]
    pub formalizer: LlmConfig,
    #[serde(default)]
    pub verifier: VerifierConfig,
    /// External equivalence checker; the equivalence slot stays skipped
    /// without one.
    #[serde(default)]
    pub equivalence: Option<CommandConfig>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        let mut out = PathBuf::new();
        for c in base.join(&*p).components() {
            match c {
                Component::CurDir => {}
                Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                    out.pop();
                }
                c => out.push(c),
            }
        }
        *p = out;
    }
}

impl RunConfig {
    pub fn new(corpus: PathBuf, benchmark: PathBuf, output: PathBuf, mode: RunMode) -> Self {
        let mut c: RunConfig = toml::from_str(&format!(
            "corpus = ''\nbenchmark = ''\noutput = ''\nmode = '{}'\n",
            mode.as_str()
        ))
        .expect("minimal configuration parses");
        c.corpus = corpus;
        c.benchmark = benchmark;
        c.output = output;
        c
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut c = Self::parse(&text)?;
        c.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.corpus);
        resolve(base, &mut self.benchmark);
        resolve(base, &mut self.output);
        for p in [
            &mut self.index,
            &mut self.cache_dir,
            &mut self.index_embeddings,
            &mut self.decomposition.exemplars,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        if let EmbedderConfig::File { path, .. } = &mut self.embedder {
            resolve(base, path);
        }
        for llm in [&mut self.decomposer, &mut self.formalizer] {
            if let LlmConfig::Stub { script, .. } = llm {
                resolve(base, script);
            }
        }
    }

    /// pass@k values reported for this run.
    pub fn report_ks(&self) -> Vec<usize> {
        let mut ks = if self.eval_k.is_empty() {
            vec![1, self.samples]
        } else {
            self.eval_k.clone()
        };
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    pub fn illustrates(&self) -> bool {
        match self.mode {
            RunMode::Drift | RunMode::Monolithic => !self.no_illustrate,
            RunMode::Oracle => self.oracle_with_illustrations,
            RunMode::ZeroShot | RunMode::Parametric => false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.no_illustrate && matches!(self.mode, RunMode::ZeroShot | RunMode::Parametric) {
            return Err(invalid(format!(
                "no_illustrate has no meaning in {} mode, which never illustrates",
                self.mode
            )));
        }
        if self.oracle_with_illustrations && self.mode != RunMode::Oracle {
            return Err(invalid("oracle_with_illustrations requires oracle mode"));
        }
        if self.oracle_with_illustrations && self.no_illustrate {
            return Err(invalid("oracle_with_illustrations contradicts no_illustrate"));
        }
        if self.mode.needs_index() && self.index.is_none() {
            return Err(invalid(format!("{} mode needs an index path", self.mode)));
        }
        for (name, v) in [
            ("k", self.k),
            ("k_per_query", self.k_per_query),
            ("samples", self.samples),
            ("workers", self.workers),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(invalid("temperature must be a non-negative number"));
        }
        if let Some(&k) = self.report_ks().iter().find(|&&k| k == 0 || k > self.samples) {
            return Err(invalid(format!(
                "pass@{k} is not computable from {} samples",
                self.samples
            )));
        }
        if self.decomposition.cap == 0 {
            return Err(invalid("decomposition cap must be at least 1"));
        }
        if self.keywords.is_empty() {
            return Err(invalid("keyword list is empty"));
        }
        validate_subquery_template(&self.subquery_template).map_err(|e| invalid(e.to_string()))?;
        if !self.object_template.contains('{') {
            return Err(invalid("object_template has no placeholders"));
        }
        if let EmbedderConfig::Mock { dimension: 0, .. } = self.embedder {
            return Err(invalid("mock embedder dimension must be positive"));
        }
        if let VerifierConfig::Command(c) = &self.verifier {
            if c.argv.is_empty() {
                return Err(invalid("verifier argv is empty"));
            }
        }
        if self.equivalence.as_ref().is_some_and(|c| c.argv.is_empty()) {
            return Err(invalid("equivalence argv is empty"));
        }
        Ok(())
    }
}

/// Live providers built from a configuration.
pub struct Providers {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub decomposer: LlmClient,
    pub formalizer: LlmClient,
    pub checker: Option<TypeChecker>,
    pub equivalence: Option<EquivalenceChecker>,
}

pub fn build_embedder(
    cfg: &EmbedderConfig,
    cache: Option<Arc<ResponseCache>>,
) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
    let inner: Arc<dyn EmbeddingProvider> = match cfg {
        EmbedderConfig::Mock { dimension, mode } => Arc::new(MockEmbedder::new(*dimension, *mode)),
        EmbedderConfig::File { path, tag } => {
            Arc::new(FileEmbeddings::load(path, tag.clone()).map_err(|e| invalid(format!("{}: {e}", path.display())))?)
        }
        EmbedderConfig::Http(c) => Arc::new(HttpEmbedder::new(c.clone())),
    };
    let cached = CachedEmbedder::new(inner);
    Ok(Arc::new(match cache {
        Some(c) => cached.with_disk_cache(c),
        None => cached,
    }))
}

pub fn build_llm(role: &str, cfg: &LlmConfig, cache: Option<Arc<ResponseCache>>) -> Result<LlmClient, ConfigError> {
    let client = match cfg {
        LlmConfig::Stub { script, .. } => {
            let p = StubProvider::from_file(format!("stub-{role}"), script).map_err(invalid)?;
            LlmClient::new(Arc::new(p) as Arc<dyn ChatProvider>).with_retry(RetryPolicy::none())
        }
        LlmConfig::Http {
            endpoint,
            auth_env,
            timeout_secs,
            max_retries,
            rate_limit,
            ..
        } => {
            let provider = HttpChatProvider::new(
                format!("http:{endpoint}"),
                HttpChatConfig {
                    endpoint: endpoint.clone(),
                    auth_env: auth_env.clone(),
                    timeout_secs: *timeout_secs,
                },
            );
            let mut c = LlmClient::new(Arc::new(provider)).with_retry(RetryPolicy {
                max_retries: *max_retries,
                ..RetryPolicy::default()
            });
            if let Some(rl) = rate_limit {
                if rl.requests == 0 || rl.interval_secs.is_nan() || rl.interval_secs <= 0.0 {
                    return Err(invalid("rate limit needs requests >= 1 and a positive interval"));
                }
                c = c.with_rate_limiter(Arc::new(RateLimiter::new(
                    rl.requests,
                    Duration::from_secs_f64(rl.interval_secs),
                    Arc::new(SystemClock::new()),
                )));
            }
            c
        }
    };
    Ok(match cache {
        Some(c) => client.with_cache(c),
        None => client,
    })
}

pub fn build_command(cfg: &CommandConfig) -> Result<CommandVerifier, ConfigError> {
    CommandVerifier::new(cfg.argv.clone(), Duration::from_secs(cfg.timeout_secs))
        .map(|v| v.with_extension(cfg.extension.clone()))
        .map_err(|e| invalid(e.to_string()))
}

pub fn open_cache(dir: Option<&Path>) -> Result<Option<Arc<ResponseCache>>, ConfigError> {
    dir.map(|d| ResponseCache::open(d).map(Arc::new))
        .transpose()
        .map_err(|e| invalid(format!("cache directory: {e}")))
}

impl Providers {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ConfigError> {
        let cache = open_cache(cfg.cache_dir.as_deref())?;
        let checker = match &cfg.verifier {
            VerifierConfig::None => None,
            VerifierConfig::Stub { needle } => Some(TypeChecker::new(Arc::new(StubVerifier::new(needle.clone())))),
            VerifierConfig::Command(c) => Some(TypeChecker::new(Arc::new(build_command(c)?) as Arc<dyn Verifier>)),
        };
        Ok(Self {
            embedder: build_embedder(&cfg.embedder, cache.clone())?,
            decomposer: build_llm("decomposer", &cfg.decomposer, cache.clone())?,
            formalizer: build_llm("formalizer", &cfg.formalizer, cache)?,
            checker,
            equivalence: cfg
                .equivalence
                .as_ref()
                .map(build_command)
                .transpose()?
                .map(EquivalenceChecker::new),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(mode: RunMode) -> RunConfig {
        let mut c = RunConfig::new("c.jsonl".into(), "b.jsonl".into(), "out".into(), mode);
        c.index = Some("i.idx".into());
        c
    }

    #[test]
    fn defaults() {
        let c = base(RunMode::Drift);
        assert_eq!((c.m, c.k, c.k_per_query, c.samples, c.seed_base), (3, 5, 1, 1, 42));
        assert_eq!(c.temperature, 0.7);
        assert_eq!(c.report_ks(), [1]);
        assert!(c.validate().is_ok());
        assert!(c.illustrates());
    }

    #[test]
    fn flag_combinations() {
        for mode in [RunMode::ZeroShot, RunMode::Parametric] {
            let mut c = base(mode);
            c.no_illustrate = true;
            assert!(c.validate().is_err(), "{mode}");
        }
        let mut c = base(RunMode::Drift);
        c.oracle_with_illustrations = true;
        assert!(c.validate().is_err());
        let mut c = base(RunMode::Oracle);
        assert!(!c.illustrates());
        c.oracle_with_illustrations = true;
        assert!(c.illustrates());
        let mut c = base(RunMode::Monolithic);
        c.index = None;
        assert!(c.validate().is_err());
        let mut c = base(RunMode::Drift);
        c.eval_k = vec![1, 10];
        assert!(c.validate().is_err());
        c.samples = 10;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn toml_round_trip_and_paths() {
        let text = r#"
corpus = "lib.jsonl"
benchmark = "bench.jsonl"
index = "lib.idx"
output = "out"
mode = "drift"
samples = 10

[embedder]
kind = "mock"
dimension = 32

[formalizer]
kind = "http"
endpoint = "http://localhost:1/v1/chat/completions"
model = "m"
rate_limit = { requests = 5 }

[verifier]
kind = "command"
argv = ["lake", "env", "lean"]
"#;
        let mut c = RunConfig::parse(text).unwrap();
        assert_eq!(c.report_ks(), [1, 10]);
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        c.resolve_paths(Path::new("/exp"));
        assert_eq!(c.corpus, Path::new("/exp/lib.jsonl"));
        assert_eq!(c.index.as_deref(), Some(Path::new("/exp/lib.idx")));
        let mut up = RunConfig::parse(text).unwrap();
        up.output = "../out".into();
        up.resolve_paths(Path::new("/exp/./fixtures"));
        assert_eq!(up.output, Path::new("/exp/out"));
        assert!(RunConfig::parse("corpus = 1").is_err());
        assert!(RunConfig::parse(&format!("{text}\nbogus = 1")).is_err());
    }

    #[test]
    fn mode_names() {
        for m in RunMode::ALL {
            assert_eq!(m.as_str().parse::<RunMode>().unwrap(), m);
        }
        assert_eq!("zero-shot".parse::<RunMode>().unwrap(), RunMode::ZeroShot);
        assert!("dense".parse::<RunMode>().is_err());
    }
}
