//! Single-file index cache.
//!
//! Layout (all integers little-endian, strings as `u32` length + UTF-8):
//!
//! ```text
//! magic "CAMPIDX\0" | version u32 | revision u64 | config (JSON string)
//! file count u32 | (path, text)*
//! skipped count u32 | (path, message)*
//! canonical length u64 | canonical bytes | SHA-256 of canonical bytes (32)
//! ```
//!
//! Loading re-derives the snapshot from the stored sources and rejects the
//! file unless the re-derived canonical form hashes to the stored digest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{canonical_bytes, link, Diagnostic, FileState, IndexConfig, IndexError, IndexSnapshot, Result};

pub const CACHE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CAMPIDX\0";

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn save_cache(path: &Path, snap: &IndexSnapshot) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&snap.revision.to_le_bytes());
    put_str(&mut buf, &serde_json::to_string(&snap.config).expect("config serializes"));
    buf.extend_from_slice(&(snap.files.len() as u32).to_le_bytes());
    for (p, f) in &snap.files {
        put_str(&mut buf, p);
        put_str(&mut buf, &f.text);
    }
    buf.extend_from_slice(&(snap.skipped.len() as u32).to_le_bytes());
    for d in &snap.skipped {
        put_str(&mut buf, &d.path);
        put_str(&mut buf, &d.message);
    }
    let canon = canonical_bytes(snap.config.d_emb, &snap.records, &snap.units);
    buf.extend_from_slice(&(canon.len() as u64).to_le_bytes());
    buf.extend_from_slice(&canon);
    buf.extend_from_slice(&snap.content_hash);

    // write-then-rename so readers never see a partial file
    let io = |e| IndexError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&buf).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| IndexError::Cache("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| IndexError::Cache("invalid UTF-8".into()))
    }
}

pub fn load_cache(path: &Path) -> Result<IndexSnapshot> {
    let buf = std::fs::read(path).map_err(|e| IndexError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(IndexError::Cache("not an index cache file".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(IndexError::Cache(format!(
            "unsupported cache version {version} (expected {CACHE_VERSION})"
        )));
    }
    let revision = r.u64()?;
    let config: IndexConfig =
        serde_json::from_str(&r.string()?).map_err(|e| IndexError::Cache(format!("bad config: {e}")))?;
    config.validate()?;
    let n_files = r.u32()?;
    let mut files = BTreeMap::new();
    for _ in 0..n_files {
        let p = r.string()?;
        let text = r.string()?;
        let profile = config
            .profile_for(&p)
            .ok_or_else(|| IndexError::Cache(format!("file {p} not indexable under stored config")))?;
        files.insert(p.clone(), Arc::new(FileState::new(&p, text, profile)));
    }
    let n_skipped = r.u32()?;
    let mut skipped = Vec::new();
    for _ in 0..n_skipped {
        skipped.push(Diagnostic {
            path: r.string()?,
            message: r.string()?,
        });
    }
    let canon_len = r.u64()? as usize;
    let canon = r.take(canon_len)?;
    let stored: [u8; 32] = r.take(32)?.try_into().unwrap();
    if r.pos != buf.len() {
        return Err(IndexError::Cache("trailing bytes".into()));
    }
    if <[u8; 32]>::from(Sha256::digest(canon)) != stored {
        return Err(IndexError::Cache("canonical section does not match its digest".into()));
    }
    let snap = link(config, files, skipped, revision);
    if snap.content_hash != stored {
        return Err(IndexError::Cache("stored index disagrees with its sources".into()));
    }
    Ok(snap)
}

#[cfg(test)]
mod tests {
    use super::super::build_from_sources;
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut src = BTreeMap::new();
        src.insert("a.rs".to_string(), "fn a() { b(); }\n".to_string());
        src.insert("b.py".to_string(), "def b():\n    return 1\n".to_string());
        let snap = build_from_sources(&IndexConfig::default(), src).unwrap();
        let snap = snap
            .apply_edit(&super::super::FileEdit::Write {
                path: "c.rs".into(),
                text: "fn c() {}".into(),
            })
            .unwrap();
        let path = dir.path().join("idx.bin");
        save_cache(&path, &snap).unwrap();
        let back = load_cache(&path).unwrap();
        assert_eq!(back.content_hash(), snap.content_hash());
        assert_eq!(back.revision(), 1);
        assert_eq!(back.records(), snap.records());
    }

    #[test]
    fn corrupted_cache_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut src = BTreeMap::new();
        src.insert("a.rs".to_string(), "fn a() {}\n".to_string());
        let snap = build_from_sources(&IndexConfig::default(), src).unwrap();
        let path = dir.path().join("idx.bin");
        save_cache(&path, &snap).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 40] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cache(&path), Err(IndexError::Cache(_))));
        std::fs::write(&path, b"garbage").unwrap();
        assert!(load_cache(&path).is_err());
    }
}
