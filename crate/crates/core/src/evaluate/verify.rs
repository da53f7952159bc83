//! External verifier commands and their in-process stand-ins.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::{EvaluateError, Verdict};
use crate::formalize::FormalizationAttempt;

pub const TYPECHECK_SLOT: &str = "typecheck";
pub const BEQ_SLOT: &str = "beq_plus";

const DETAIL_LIMIT: usize = 4000;
const POLL: Duration = Duration::from_millis(5);

pub trait Verifier: Send + Sync {
    fn tag(&self) -> &str;
    fn check(&self, source: &str) -> Verdict;
}

/// Accepts any source containing `needle`.
#[derive(Debug, Clone)]
pub struct StubVerifier {
    needle: String,
}

impl StubVerifier {
    pub fn new(needle: impl Into<String>) -> Self {
        Self { needle: needle.into() }
    }
}

impl Default for StubVerifier {
    fn default() -> Self {
        Self::new("theorem")
    }
}

impl Verifier for StubVerifier {
    fn tag(&self) -> &str {
        "stub"
    }

    fn check(&self, source: &str) -> Verdict {
        if source.contains(&self.needle) {
            Verdict::pass()
        } else {
            Verdict::fail(format!("missing {:?}", self.needle))
        }
    }
}

/// Runs `argv` with the work file paths appended. Exit 0 is pass, exit 1 is
/// fail, anything else (signals, launch failure, timeout) is an error.
#[derive(Debug, Clone)]
pub struct CommandVerifier {
    argv: Vec<String>,
    timeout: Duration,
    extension: String,
    tag: String,
}

fn resolve_binary(name: &str) -> Option<PathBuf> {
    let p = Path::new(name);
    if p.components().count() > 1 {
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(name))
            .find(|c| c.is_file())
    })
}

fn truncate(mut s: String) -> String {
    if s.len() > DETAIL_LIMIT {
        let mut cut = DETAIL_LIMIT;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
        s.push_str("...");
    }
    s
}

impl CommandVerifier {
    pub fn new(argv: Vec<String>, timeout: Duration) -> Result<Self, EvaluateError> {
        let bin = argv.first().ok_or(EvaluateError::EmptyCommand)?;
        resolve_binary(bin).ok_or_else(|| EvaluateError::MissingVerifier(bin.clone()))?;
        Ok(Self {
            tag: argv.join(" "),
            argv,
            timeout,
            extension: "lean".into(),
        })
    }

    pub fn with_extension(mut self, ext: impl Into<String>) -> Self {
        self.extension = ext.into();
        self
    }

    /// Writes each source to its own work file and runs the command on them.
    pub fn run(&self, names: &[&str], sources: &[&str]) -> Verdict {
        let started = Instant::now();
        let errored = |msg: String| {
            let mut v = Verdict::error(msg);
            v.duration_ms = Some(started.elapsed().as_millis() as u64);
            v
        };
        let dir = match tempfile::tempdir() {
            Ok(d) => d,
            Err(e) => return errored(format!("cannot create work dir: {e}")),
        };
        let mut paths = Vec::with_capacity(sources.len());
        for (name, src) in names.iter().zip(sources) {
            let path = dir.path().join(format!("{name}.{}", self.extension));
            if let Err(e) = std::fs::write(&path, src) {
                return errored(format!("cannot write work file: {e}"));
            }
            paths.push(path);
        }
        let mut child = match Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .args(&paths)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(c) => c,
            Err(e) => return errored(format!("cannot launch {}: {e}", self.argv[0])),
        };
        let mut pipe = child.stderr.take().expect("stderr is piped");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = pipe.read_to_end(&mut buf);
            String::from_utf8_lossy(&buf).into_owned()
        });
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if started.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                Ok(None) => thread::sleep(POLL),
                Err(e) => return errored(format!("wait failed: {e}")),
            }
        };
        let stderr = truncate(reader.join().unwrap_or_default());
        match status.map(|s| s.code()) {
            None => errored(format!("timed out after {:.1}s", self.timeout.as_secs_f64())),
            Some(Some(0)) => Verdict::pass().with_detail(stderr),
            Some(Some(1)) => Verdict::fail(stderr),
            Some(code) => {
                let what = code.map_or("killed by signal".to_string(), |c| format!("exit status {c}"));
                errored(if stderr.is_empty() {
                    what
                } else {
                    format!("{what}: {stderr}")
                })
            }
        }
    }
}

impl Verifier for CommandVerifier {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn check(&self, source: &str) -> Verdict {
        self.run(&["candidate"], &[source])
    }
}

fn work_source(header: Option<&str>, statement: &str) -> String {
    match header.map(str::trim_end).filter(|h| !h.is_empty()) {
        Some(h) => format!("{h}\n\n{statement}\n"),
        None => format!("{statement}\n"),
    }
}

fn verdict_key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// A verifier plus a verdict cache keyed by the checked source's hash.
pub struct TypeChecker {
    verifier: Arc<dyn Verifier>,
    cache: Mutex<HashMap<String, Verdict>>,
}

impl TypeChecker {
    pub fn new(verifier: Arc<dyn Verifier>) -> Self {
        Self {
            verifier,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("verdict cache poisoned").len()
    }

    pub fn check(&self, attempt: &FormalizationAttempt, header: Option<&str>) -> Verdict {
        let Some(stmt) = attempt.formal_statement.as_deref() else {
            return Verdict::skipped();
        };
        let source = work_source(header, stmt);
        let key = verdict_key(&[self.verifier.tag(), &source]);
        if let Some(v) = self.cache.lock().expect("verdict cache poisoned").get(&key) {
            return v.clone();
        }
        let v = self.verifier.check(&source);
        self.cache
            .lock()
            .expect("verdict cache poisoned")
            .entry(key)
            .or_insert(v)
            .clone()
    }
}

/// Verdict for an attempt's extracted statement; skipped when none was
/// extracted.
pub fn typecheck(checker: &TypeChecker, attempt: &FormalizationAttempt, header: Option<&str>) -> Verdict {
    checker.check(attempt, header)
}

/// External equivalence command: argv + candidate file + reference file,
/// same exit-code contract as the type checker.
pub struct EquivalenceChecker {
    command: CommandVerifier,
    cache: Mutex<HashMap<String, Verdict>>,
}

impl EquivalenceChecker {
    pub fn new(command: CommandVerifier) -> Self {
        Self {
            command,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn check(&self, attempt: &FormalizationAttempt, reference: Option<&str>, header: Option<&str>) -> Verdict {
        let (Some(stmt), Some(reference)) = (attempt.formal_statement.as_deref(), reference) else {
            return Verdict::skipped();
        };
        let cand = work_source(header, stmt);
        let refr = work_source(header, reference);
        let key = verdict_key(&[self.command.tag(), &cand, &refr]);
        if let Some(v) = self.cache.lock().expect("verdict cache poisoned").get(&key) {
            return v.clone();
        }
        let v = self.command.run(&["candidate", "reference"], &[&cand, &refr]);
        self.cache
            .lock()
            .expect("verdict cache poisoned")
            .entry(key)
            .or_insert(v)
            .clone()
    }
}
