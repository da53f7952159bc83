//! Offline end-to-end demonstration on bundled fixtures.
//!
//! The fixtures are a 34-object library, a 5-item benchmark and stub scripts
//! for both models. Everything runs with the token-hashing mock embedder and
//! the substring stub verifier, so output is byte-identical across runs.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, RunMode};
use crate::pipeline::{cmd_index, cmd_run, IndexSummary, PipelineError, RunOutcome};

pub const FIXTURES_DIR: &str = "fixtures";
pub const REPORT_DIR: &str = "report";
pub const CONFIG_FILE: &str = "demo.toml";

const FIXTURES: [(&str, &str); 4] = [
    ("corpus.jsonl", include_str!("../assets/demo/corpus.jsonl")),
    ("benchmark.jsonl", include_str!("../assets/demo/benchmark.jsonl")),
    ("decomposer.jsonl", include_str!("../assets/demo/decomposer.jsonl")),
    ("formalizer.jsonl", include_str!("../assets/demo/formalizer.jsonl")),
];

/// Configuration text for the demo; paths are relative to the fixtures
/// directory.
pub fn demo_config_text(mode: RunMode, samples: usize, no_illustrate: bool) -> String {
    let eval_k = if samples >= 10 {
        "[1, 10]".to_string()
    } else {
        format!("[1, {samples}]")
    };
    format!(
        r#"corpus = "corpus.jsonl"
benchmark = "benchmark.jsonl"
index = "corpus.idx"
output = "../{REPORT_DIR}"
mode = "{mode}"
no_illustrate = {no_illustrate}
samples = {samples}
eval_k = {eval_k}
workers = 4
object_template = "{{id}}"

[embedder]
kind = "mock"
dimension = 64
mode = "tokens"

[decomposer]
kind = "stub"
script = "decomposer.jsonl"

[formalizer]
kind = "stub"
script = "formalizer.jsonl"

[verifier]
kind = "stub"
needle = "theorem"
"#
    )
}

/// Writes the fixtures and a configuration under `dir/fixtures` and returns
/// the loaded configuration.
pub fn prepare(dir: &Path, mode: RunMode, samples: usize, no_illustrate: bool) -> Result<RunConfig, PipelineError> {
    let fixtures = dir.join(FIXTURES_DIR);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Io { path, source }
    };
    fs::create_dir_all(&fixtures).map_err(io(&fixtures))?;
    for (name, body) in FIXTURES {
        let p = fixtures.join(name);
        fs::write(&p, body).map_err(io(&p))?;
    }
    let cfg_path = fixtures.join(CONFIG_FILE);
    fs::write(&cfg_path, demo_config_text(mode, samples, no_illustrate)).map_err(io(&cfg_path))?;
    Ok(RunConfig::load(&cfg_path)?)
}

pub struct DemoOutcome {
    pub index: IndexSummary,
    pub run: RunOutcome,
    pub config_path: PathBuf,
}

/// Prepares fixtures, builds the index and runs the pipeline.
pub fn run_demo(dir: &Path, mode: RunMode, samples: usize, no_illustrate: bool) -> Result<DemoOutcome, PipelineError> {
    let cfg = prepare(dir, mode, samples, no_illustrate)?;
    cfg.validate()?;
    let embedder = crate::config::build_embedder(&cfg.embedder, None)?;
    let index = cmd_index(&cfg, embedder.as_ref())?;
    let run = cmd_run(&cfg)?;
    Ok(DemoOutcome {
        index,
        run,
        config_path: dir.join(FIXTURES_DIR).join(CONFIG_FILE),
    })
}
