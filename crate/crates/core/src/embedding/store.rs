//! Binary index file.
//!
//! ```text
//! magic        b"DRIFTIDX"            8 bytes
//! version      u32 LE
//! tag_len      u32 LE, then tag bytes (UTF-8)
//! dimension    u32 LE
//! count        u64 LE
//! entries      count × (id_len u32 LE, id bytes, dimension × f32 LE)
//! checksum     u64 LE, first 8 bytes of SHA-256 over everything above
//! ```
//!
//! The checksum is verified before any other field is interpreted, so a
//! corrupted byte anywhere in the file surfaces as a checksum error.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{IndexFileError, VectorIndex};

pub const INDEX_MAGIC: &[u8; 8] = b"DRIFTIDX";
pub const INDEX_VERSION: u32 = 1;

fn checksum(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// Serializes an index into its file representation.
pub fn write_index(index: &VectorIndex) -> Vec<u8> {
    let dim = index.dimension();
    let mut buf = Vec::with_capacity(32 + index.len() * (dim * 4 + 16));
    buf.extend_from_slice(INDEX_MAGIC);
    buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    let tag = index.provider_tag().as_bytes();
    buf.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    buf.extend_from_slice(tag);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for (id, values) in index.entries() {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexFileError> {
        let end = self.pos.checked_add(n).ok_or(IndexFileError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(IndexFileError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexFileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, IndexFileError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| IndexFileError::Malformed("non-UTF-8 string".into()))
    }
}

/// Parses an index from its file representation.
pub fn read_index(bytes: &[u8]) -> Result<VectorIndex, IndexFileError> {
    if bytes.len() < INDEX_MAGIC.len() + 8 {
        return Err(IndexFileError::Truncated);
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = checksum(payload);
    if stored != computed {
        return Err(IndexFileError::Checksum { stored, computed });
    }

    let mut r = Reader { buf: payload, pos: 0 };
    if r.take(8)? != INDEX_MAGIC {
        return Err(IndexFileError::BadMagic);
    }
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(IndexFileError::VersionMismatch {
            found: version,
            expected: INDEX_VERSION,
        });
    }
    let tag = r.string()?;
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    let mut index = VectorIndex::empty(dim, tag);
    let mut values = vec![0f32; dim];
    for _ in 0..count {
        let id = r.string()?;
        let raw = r.take(dim * 4)?;
        for (slot, chunk) in values.iter_mut().zip(raw.chunks_exact(4)) {
            *slot = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexFileError::Malformed(format!("non-finite vector for {id:?}")));
        }
        index
            .push_raw(id, &values)
            .map_err(|e| IndexFileError::Malformed(e.to_string()))?;
    }
    if r.pos != payload.len() {
        return Err(IndexFileError::Malformed(format!(
            "{} trailing bytes after entries",
            payload.len() - r.pos
        )));
    }
    Ok(index)
}

pub fn save_index(index: &VectorIndex, path: &Path) -> Result<(), IndexFileError> {
    let bytes = write_index(index);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<VectorIndex, IndexFileError> {
    read_index(&fs::read(path)?)
}
