//! Content-addressed response store.
//!
//! Layout: `<root>/<key[0..2]>/<key[2..4]>/<key>.rec`. Each record is a small
//! header followed by a blank line and the payload bytes:
//!
//! ```text
//! key: <hex>
//! created-at: <unix seconds>
//! provider: <tag>
//!
//! <payload>
//! ```
//!
//! Records are immutable. Writes go to a temp file that is hard-linked into
//! place, so a concurrent writer never observes a partial record.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use super::CacheKey;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt cache record {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("conflicting write for cache key {key}: stored payload differs ({path})")]
    Conflict { key: String, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheRecord {
    pub key: String,
    pub created_at: u64,
    pub provider_tag: String,
    pub payload: String,
}

impl CacheRecord {
    fn render(&self) -> String {
        format!(
            "key: {}\ncreated-at: {}\nprovider: {}\n\n{}",
            self.key, self.created_at, self.provider_tag, self.payload
        )
    }

    fn parse(path: &Path, text: &str) -> Result<Self, CacheError> {
        let corrupt = |message: &str| CacheError::Corrupt {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        let (header, payload) = text.split_once("\n\n").ok_or_else(|| corrupt("missing header"))?;
        let mut key = None;
        let mut created_at = None;
        let mut provider_tag = None;
        for line in header.lines() {
            match line.split_once(": ") {
                Some(("key", v)) => key = Some(v.to_string()),
                Some(("created-at", v)) => created_at = v.parse().ok(),
                Some(("provider", v)) => provider_tag = Some(v.to_string()),
                _ => return Err(corrupt("unknown header line")),
            }
        }
        Ok(Self {
            key: key.ok_or_else(|| corrupt("missing key"))?,
            created_at: created_at.ok_or_else(|| corrupt("missing created-at"))?,
            provider_tag: provider_tag.ok_or_else(|| corrupt("missing provider"))?,
            payload: payload.to_string(),
        })
    }
}

pub struct ResponseCache {
    root: PathBuf,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn open(root: &Path) -> Result<Self, CacheError> {
        fs::create_dir_all(root).map_err(|source| CacheError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let k = key.as_str();
        self.root.join(&k[0..2]).join(&k[2..4]).join(format!("{k}.rec"))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheRecord>, CacheError> {
        let path = self.path_for(key);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let rec = CacheRecord::parse(&path, &text)?;
                if rec.key != key.as_str() {
                    return Err(CacheError::Corrupt {
                        path,
                        message: "key header does not match file name".into(),
                    });
                }
                Ok(Some(rec))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(CacheError::Io { path, source }),
        }
    }

    /// Stores a payload. Re-storing an identical payload is a no-op; a
    /// different payload under an existing key is a conflict.
    pub fn put(&self, key: &CacheKey, provider_tag: &str, payload: &str) -> Result<(), CacheError> {
        let path = self.path_for(key);
        let dir = path.parent().expect("record path has a parent");
        let io_err = |p: &Path| {
            let p = p.to_path_buf();
            move |source| CacheError::Io { path: p, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let record = CacheRecord {
            key: key.to_string(),
            created_at,
            provider_tag: provider_tag.to_string(),
            payload: payload.to_string(),
        };
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            key,
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(record.render().as_bytes()).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        let linked = fs::hard_link(&tmp, &path);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                let existing = self.get(key)?.ok_or_else(|| CacheError::Corrupt {
                    path: path.clone(),
                    message: "record vanished".into(),
                })?;
                if existing.payload == payload {
                    Ok(())
                } else {
                    Err(CacheError::Conflict {
                        key: key.to_string(),
                        path,
                    })
                }
            }
            Err(source) => Err(CacheError::Io { path, source }),
        }
    }

    /// Number of stored records.
    pub fn len(&self) -> Result<usize, CacheError> {
        let mut n = 0;
        let read = |p: &Path| {
            fs::read_dir(p).map_err(|source| CacheError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        for a in read(&self.root)? {
            let a = a.map_err(|source| CacheError::Io {
                path: self.root.clone(),
                source,
            })?;
            if !a.path().is_dir() {
                continue;
            }
            for b in read(&a.path())? {
                let b = b.map_err(|source| CacheError::Io { path: a.path(), source })?;
                if !b.path().is_dir() {
                    continue;
                }
                n += read(&b.path())?
                    .filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "rec"))
                    .count();
            }
        }
        Ok(n)
    }

    pub fn is_empty(&self) -> Result<bool, CacheError> {
        Ok(self.len()? == 0)
    }
}
