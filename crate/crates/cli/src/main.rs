use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use drift_core::config::{build_embedder, open_cache, ConfigError, RunConfig, RunMode};
use drift_core::corpus::{load_benchmark, load_library, validate_library};
use drift_core::demo::{run_demo, REPORT_DIR};
use drift_core::evaluate::{render_table, Averaging, EvaluateError};
use drift_core::pipeline::{cmd_eval, cmd_index, cmd_run, PipelineError, RunOutcome};

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_FATAL: u8 = 4;

const MODES_HELP: &str = "\
Modes and the experimental conditions they reproduce:
  drift                      full pipeline (decompose, retrieve, illustrate)
  drift --no-illustrate      w/o Illustrate
  monolithic --no-illustrate w/o Decompose (single dense query, the DPR baseline)
  monolithic                 single dense query with illustrations
  zero_shot                  w/o Retrieval (no premises, no illustrations)
  oracle                     gold premises; add --oracle-with-illustrations for demonstrations
  parametric                 decomposition only, sub-queries listed in the prompt

Exit codes: 0 success, 2 configuration error, 3 some items failed, 4 fatal.";

#[derive(Parser)]
#[command(name = "drift", version, about = "Retrieval-augmented autoformalization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed the library and write the vector index.
    Index {
        #[arg(long, short)]
        config: PathBuf,
        /// Override the index path from the configuration.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Use precomputed vectors (JSONL keyed by object id).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Run the pipeline over a benchmark and write the report.
    #[command(after_help = MODES_HELP)]
    Run(RunArgs),
    /// Re-aggregate an existing records.jsonl.
    Eval {
        records: PathBuf,
        /// pass@k values, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        k: Vec<usize>,
        /// Pool retrieval counts across items instead of averaging per item.
        #[arg(long)]
        micro: bool,
        /// Also write the summary as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check a library (and optionally a benchmark) for dangling references.
    Validate {
        corpus: PathBuf,
        #[arg(long)]
        benchmark: Option<PathBuf>,
        /// Exit with status 3 when any issue is found.
        #[arg(long)]
        strict: bool,
    },
    /// Run the bundled offline demo.
    #[command(after_help = MODES_HELP)]
    Demo {
        /// Working directory; fixtures and report are written here.
        #[arg(long, short, default_value = "drift-demo")]
        dir: PathBuf,
        #[arg(long, default_value = "drift")]
        mode: RunMode,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long)]
        no_illustrate: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<RunMode>,
    #[arg(long)]
    no_illustrate: bool,
    #[arg(long)]
    oracle_with_illustrations: bool,
    /// Illustration budget.
    #[arg(long)]
    m: Option<usize>,
    /// Monolithic top-k.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_per_query: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed_base: Option<u64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// pass@k values, comma separated.
    #[arg(long, value_delimiter = ',')]
    eval_k: Option<Vec<usize>>,
    #[arg(long)]
    micro: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        cfg.no_illustrate |= self.no_illustrate;
        cfg.oracle_with_illustrations |= self.oracle_with_illustrations;
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.k_per_query {
            cfg.k_per_query = v;
        }
        if let Some(v) = self.samples {
            cfg.samples = v;
        }
        if let Some(v) = self.seed_base {
            cfg.seed_base = v;
        }
        if let Some(v) = self.temperature {
            cfg.temperature = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = &self.eval_k {
            cfg.eval_k = v.clone();
        }
        if self.micro {
            cfg.averaging = Averaging::Micro;
        }
        if let Some(v) = &self.output {
            cfg.output = v.clone();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    let config = e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(c.downcast_ref::<PipelineError>(), Some(PipelineError::Config(_)))
            || matches!(
                c.downcast_ref::<EvaluateError>(),
                Some(EvaluateError::MissingVerifier(..) | EvaluateError::EmptyCommand | EvaluateError::ZeroK)
            )
    });
    if config {
        EXIT_CONFIG
    } else {
        EXIT_FATAL
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Index {
            config,
            index,
            embeddings,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if index.is_some() {
                cfg.index = index;
            }
            if embeddings.is_some() {
                cfg.index_embeddings = embeddings;
            }
            let embedder = build_embedder(&cfg.embedder, open_cache(cfg.cache_dir.as_deref())?)?;
            let s = cmd_index(&cfg, embedder.as_ref())?;
            println!(
                "indexed {} objects (dimension {}) into {}\nchecksum {}",
                s.count,
                s.dimension,
                s.path.display(),
                s.checksum
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let mut cfg = RunConfig::load(&args.config)?;
            args.apply(&mut cfg);
            cfg.validate()?;
            let out = cmd_run(&cfg)?;
            Ok(finish_run(&out, &cfg.output))
        }
        Command::Eval {
            records,
            k,
            micro,
            json,
        } => {
            let averaging = if micro { Averaging::Micro } else { Averaging::Macro };
            let summary = cmd_eval(&records, &k, averaging)?;
            print!("{}", render_table(&summary));
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&summary)?;
                std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate {
            corpus,
            benchmark,
            strict,
        } => validate(&corpus, benchmark.as_deref(), strict),
        Command::Demo {
            dir,
            mode,
            samples,
            no_illustrate,
        } => {
            let out = run_demo(&dir, mode, samples, no_illustrate)?;
            println!("config {}", out.config_path.display());
            println!("index {} objects, checksum {}", out.index.count, out.index.checksum);
            Ok(finish_run(&out.run, &dir.join(REPORT_DIR)))
        }
    }
}

fn finish_run(out: &RunOutcome, dir: &Path) -> ExitCode {
    print!("{}", render_table(&out.report.summary));
    println!("report written to {}", dir.display());
    let failed = out.failed();
    if failed > 0 {
        eprintln!("{failed} of {} items failed", out.report.summary.items);
    }
    if out.all_failed() {
        ExitCode::from(EXIT_FATAL)
    } else if failed > 0 {
        ExitCode::from(EXIT_PARTIAL)
    } else {
        ExitCode::SUCCESS
    }
}

fn validate(corpus: &Path, benchmark: Option<&Path>, strict: bool) -> Result<ExitCode> {
    let lib = load_library(corpus)?;
    let report = validate_library(&lib);
    println!("{}: {} objects", corpus.display(), lib.len());
    for issue in &report.issues {
        println!("  {issue}");
    }
    let mut missing = 0;
    if let Some(path) = benchmark {
        let items = load_benchmark(path)?;
        println!("{}: {} items", path.display(), items.len());
        for item in &items {
            for p in item.oracle_premises.iter().filter(|p| !lib.contains(p)) {
                println!("  {}: oracle premise {p:?} not in library", item.item_id);
                missing += 1;
            }
        }
    }
    let total = report.issues.len() + missing;
    if total == 0 {
        println!("no issues");
        return Ok(ExitCode::SUCCESS);
    }
    println!("{total} issue(s); dangling premises are skipped downstream");
    Ok(if strict {
        ExitCode::from(EXIT_PARTIAL)
    } else {
        ExitCode::SUCCESS
    })
}
