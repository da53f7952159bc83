use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatProvider, CompletionRequest, ProviderError};

/// One scripted response. A rule matches when the request transcript
/// contains `contains` and, if set, the request seed equals `seed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubRule {
    pub contains: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub response: String,
}

impl StubRule {
    pub fn new(contains: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            contains: contains.into(),
            seed: None,
            response: response.into(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn matches(&self, transcript: &str, seed: u64) -> bool {
        self.seed.is_none_or(|s| s == seed) && transcript.contains(&self.contains)
    }
}

/// Offline provider answering from an ordered rule list; first match wins.
pub struct StubProvider {
    tag: String,
    rules: Vec<StubRule>,
    calls: AtomicU64,
}

impl StubProvider {
    pub fn new(tag: impl Into<String>, rules: Vec<StubRule>) -> Self {
        Self {
            tag: tag.into(),
            rules,
            calls: AtomicU64::new(0),
        }
    }

    /// Parses a line-delimited rule script.
    pub fn from_script(tag: impl Into<String>, script: &str) -> Result<Self, String> {
        let rules = script
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("rule line {}: {e}", i + 1)))
            .collect::<Result<Vec<StubRule>, _>>()?;
        Ok(Self::new(tag, rules))
    }

    pub fn from_file(tag: impl Into<String>, path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_script(tag, &text)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for StubProvider {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let transcript = req.transcript();
        self.rules
            .iter()
            .find(|r| r.matches(&transcript, req.seed))
            .map(|r| r.response.clone())
            .ok_or_else(|| ProviderError::Scripted("no stub rule matches the request".into()))
    }
}
