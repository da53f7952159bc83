//! Formal library and benchmark loading.
//!
//! Both files are line-delimited JSON records. Unknown fields are ignored and
//! field names are case-sensitive. Blank lines are skipped.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    #[serde(alias = "def")]
    Definition,
    #[serde(alias = "lemma")]
    Theorem,
    Other,
}

/// One library declaration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormalObject {
    pub id: String,
    pub kind: ObjectKind,
    pub signature: String,
    pub source: String,
    pub informal: Option<String>,
    pub premises: BTreeSet<String>,
}

impl FormalObject {
    pub fn is_theorem(&self) -> bool {
        self.kind == ObjectKind::Theorem
    }

    /// Informal statement, if present and not blank.
    pub fn informal_text(&self) -> Option<&str> {
        self.informal.as_deref().filter(|s| !s.trim().is_empty())
    }
}

/// An id-addressed set of formal objects.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Library {
    pub name: String,
    objects: BTreeMap<String, FormalObject>,
}

impl Library {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            objects: BTreeMap::new(),
        }
    }

    /// Builds a library from objects, rejecting empty or duplicate ids.
    pub fn from_objects(
        name: impl Into<String>,
        objects: impl IntoIterator<Item = FormalObject>,
    ) -> Result<Self, CorpusError> {
        let mut lib = Self::new(name);
        for (i, obj) in objects.into_iter().enumerate() {
            lib.insert_at(obj, Path::new("<memory>"), i + 1)?;
        }
        Ok(lib)
    }

    fn insert_at(&mut self, obj: FormalObject, path: &Path, line: usize) -> Result<(), CorpusError> {
        if obj.id.is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line,
                message: "empty id".into(),
            });
        }
        if self.objects.contains_key(&obj.id) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: obj.id,
            });
        }
        self.objects.insert(obj.id.clone(), obj);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&FormalObject> {
        self.objects.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.objects.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Objects in ascending id order.
    pub fn objects(&self) -> impl Iterator<Item = &FormalObject> {
        self.objects.values()
    }

    pub fn theorems(&self) -> impl Iterator<Item = &FormalObject> {
        self.objects.values().filter(|o| o.is_theorem())
    }

    /// Writes the library as line-delimited records in id order.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
        for obj in self.objects.values() {
            let line = serde_json::to_string(obj).expect("formal object serializes");
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    /// SHA-256 over the canonical record serialization, hex encoded.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for obj in self.objects.values() {
            hasher.update(serde_json::to_vec(obj).expect("formal object serializes"));
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

fn read_lines(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_records<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<Vec<(usize, T)>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|rec| (i + 1, rec))
                .map_err(|e| CorpusError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

pub fn load_library(path: &Path) -> Result<Library, CorpusError> {
    let text = read_lines(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_library(path, &name, &text)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum ValidationIssue {
    Dangling { object: String, premise: String },
    SelfReference { object: String },
    MissingInformal { theorem: String },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dangling { object, premise } => {
                write!(f, "{object}: premise {premise:?} does not resolve")
            }
            Self::SelfReference { object } => write!(f, "{object}: lists itself as a premise"),
            Self::MissingInformal { theorem } => {
                write!(f, "{theorem}: theorem has no informal statement")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn dangling(&self) -> impl Iterator<Item = (&str, &str)> {
        self.issues.iter().filter_map(|i| match i {
            ValidationIssue::Dangling { object, premise } => Some((object.as_str(), premise.as_str())),
            _ => None,
        })
    }

    pub fn missing_informal(&self) -> impl Iterator<Item = &str> {
        self.issues.iter().filter_map(|i| match i {
            ValidationIssue::MissingInformal { theorem } => Some(theorem.as_str()),
            _ => None,
        })
    }
}

/// Reports dangling references, self-references and theorems lacking
/// informal text. Never modifies the library.
pub fn validate_library(lib: &Library) -> ValidationReport {
    let mut issues = Vec::new();
    for obj in lib.objects() {
        for p in &obj.premises {
            if p == &obj.id {
                issues.push(ValidationIssue::SelfReference { object: obj.id.clone() });
            } else if !lib.contains(p) {
                issues.push(ValidationIssue::Dangling {
                    object: obj.id.clone(),
                    premise: p.clone(),
                });
            }
        }
        if obj.is_theorem() && obj.informal_text().is_none() {
            issues.push(ValidationIssue::MissingInformal {
                theorem: obj.id.clone(),
            });
        }
    }
    ValidationReport { issues }
}

/// Premise id to the theorems that use it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PremiseUsageIndex {
    usage: BTreeMap<String, BTreeSet<String>>,
}

impl PremiseUsageIndex {
    /// Theorems using `premise`; empty for unknown or unused premises.
    pub fn users(&self, premise: &str) -> impl Iterator<Item = &str> {
        self.usage
            .get(premise)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn get(&self, premise: &str) -> Option<&BTreeSet<String>> {
        self.usage.get(premise)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.usage.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Inverts theorem premise lists. Every library object gets an entry (possibly
/// empty); dangling references and self-references are skipped.
pub fn invert_dependencies(lib: &Library) -> PremiseUsageIndex {
    let mut usage: BTreeMap<String, BTreeSet<String>> =
        lib.objects().map(|o| (o.id.clone(), BTreeSet::new())).collect();
    for thm in lib.theorems() {
        for p in &thm.premises {
            if p == &thm.id {
                continue;
            }
            if let Some(users) = usage.get_mut(p) {
                users.insert(thm.id.clone());
            }
        }
    }
    PremiseUsageIndex { usage }
}

/// One benchmark problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub item_id: String,
    pub informal: String,
    #[serde(default)]
    pub oracle_premises: Vec<String>,
    #[serde(default)]
    pub reference_formal: Option<String>,
    #[serde(default)]
    pub header: Option<String>,
}

pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkItem>, CorpusError> {
    let text = read_lines(path)?;
    parse_benchmark(path, &text)
}

pub(crate) fn parse_benchmark(path: &Path, text: &str) -> Result<Vec<BenchmarkItem>, CorpusError> {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (line, item) in parse_records::<BenchmarkItem>(path, text)? {
        if item.item_id.is_empty() || item.informal.trim().is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line,
                message: "item_id and informal must be non-empty".into(),
            });
        }
        if !seen.insert(item.item_id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: item.item_id,
            });
        }
        items.push(item);
    }
    Ok(items)
}

pub(crate) fn parse_library(path: &Path, name: &str, text: &str) -> Result<Library, CorpusError> {
    let mut lib = Library::new(name);
    for (line, obj) in parse_records::<FormalObject>(path, text)? {
        lib.insert_at(obj, path, line)?;
    }
    Ok(lib)
}
