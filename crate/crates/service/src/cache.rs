//! Content-addressed on-disk cache of preprocessed documents.
//!
//! Layout: `entries/<key>.json` holds a document with its index, and
//! `ids/<document_id>` names the key most recently stored for a document.
//! Entries are immutable and written through a temporary file and a rename.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use datadoc_core::digest::FieldHasher;
use datadoc_core::ingest::PreprocessConfig;
use datadoc_core::{PreparedDocument, RawInput};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError<E> {
    #[error("cache I/O: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Build(E),
}

/// Cache key of `input` under a preprocessing config, prompt catalog and
/// embedder.
pub fn cache_key(input: &RawInput, preprocess: &PreprocessConfig, catalog_digest: &str, embedder_id: &str) -> String {
    let input = input.normalized();
    FieldHasher::new()
        .field(&input.text)
        .field(serde_json::to_vec(&input.tables).expect("tables serialize"))
        .field(preprocess.digest())
        .field(catalog_digest)
        .field(embedder_id)
        .finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub value: PreparedDocument,
}

#[derive(Debug)]
pub struct DocumentCache {
    dir: PathBuf,
    max_age: Duration,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn is_hex_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(path.parent().expect("cache paths have a parent"))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map(drop).map_err(|e| e.error)
}

impl DocumentCache {
    pub fn open(dir: impl Into<PathBuf>, max_age: Duration) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("entries"))?;
        fs::create_dir_all(dir.join("ids"))?;
        Ok(Self { dir, max_age, locks: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join("entries").join(format!("{key}.json"))
    }

    fn expired(&self, entry: &CacheEntry) -> bool {
        now_secs().saturating_sub(entry.created_at) > self.max_age.as_secs()
    }

    fn read_entry(&self, key: &str) -> io::Result<Option<CacheEntry>> {
        let bytes = match fs::read(self.entry_path(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.key == key => Ok(Some(entry)),
            Ok(_) | Err(_) => {
                tracing::warn!(key, "ignoring unreadable cache entry");
                Ok(None)
            }
        }
    }

    /// The live entry under `key`. Expired entries are removed.
    pub fn get(&self, key: &str) -> io::Result<Option<PreparedDocument>> {
        if !is_hex_digest(key) {
            return Ok(None);
        }
        match self.read_entry(key)? {
            Some(entry) if self.expired(&entry) => {
                let _ = fs::remove_file(self.entry_path(key));
                Ok(None)
            }
            Some(entry) => Ok(Some(entry.value)),
            None => Ok(None),
        }
    }

    pub fn put(&self, key: &str, value: &PreparedDocument) -> io::Result<()> {
        let entry = CacheEntry { key: key.to_string(), created_at: now_secs(), value: value.clone() };
        let bytes = serde_json::to_vec(&entry).map_err(io::Error::other)?;
        write_atomic(&self.entry_path(key), &bytes)?;
        write_atomic(&self.dir.join("ids").join(&value.document.id), key.as_bytes())
    }

    /// The most recently cached preparation of a document id.
    pub fn find_document(&self, document_id: &str) -> io::Result<Option<PreparedDocument>> {
        if !is_hex_digest(document_id) {
            return Ok(None);
        }
        let key = match fs::read_to_string(self.dir.join("ids").join(document_id)) {
            Ok(k) => k,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(self.get(key.trim())?.filter(|p| p.document.id == document_id))
    }

    /// Cached value or a fresh build, with whether it was a hit. Builds of
    /// the same key are serialized so concurrent identical requests build
    /// once.
    pub fn get_or_build<E>(
        &self,
        key: &str,
        build: impl FnOnce() -> Result<PreparedDocument, E>,
    ) -> Result<(PreparedDocument, bool), CacheError<E>> {
        let lock = self.locks.lock().unwrap().entry(key.to_string()).or_default().clone();
        let _guard = lock.lock().unwrap();
        if let Some(hit) = self.get(key)? {
            return Ok((hit, true));
        }
        let value = build().map_err(CacheError::Build)?;
        self.put(key, &value)?;
        Ok((value, false))
    }

    pub fn len(&self) -> io::Result<usize> {
        let mut n = 0;
        for entry in fs::read_dir(self.dir.join("entries"))? {
            if entry?.file_name().to_string_lossy().ends_with(".json") {
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn is_empty(&self) -> io::Result<bool> {
        Ok(self.len()? == 0)
    }

    /// Removes expired and unreadable entries; returns how many went.
    pub fn evict_expired(&self) -> io::Result<usize> {
        let mut removed = 0;
        for entry in fs::read_dir(self.dir.join("entries"))? {
            let path = entry?.path();
            let Some(key) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".json")) else {
                continue;
            };
            let stale = match self.read_entry(key)? {
                Some(e) => self.expired(&e),
                None => true,
            };
            if stale {
                fs::remove_file(&path)?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use datadoc_core::gateway::{Gateway, MockBackend};
    use datadoc_core::retrieval::HashingEmbedder;
    use datadoc_core::{build_document, PromptCatalog};

    fn prepared(text: &str) -> PreparedDocument {
        let gw = Gateway::new(Arc::new(MockBackend::new(vec![]))).with_embedder(Arc::new(HashingEmbedder::new(16)));
        build_document(&RawInput::new(text), &PreprocessConfig::default(), &PromptCatalog::default(), &gw).unwrap()
    }

    fn key(text: &str) -> String {
        cache_key(&RawInput::new(text), &PreprocessConfig::default(), "catalog", "hashing:16")
    }

    #[test]
    fn key_covers_every_component() {
        let base = key("some text");
        assert_eq!(base, cache_key(&RawInput::new("some text"), &PreprocessConfig::default(), "catalog", "hashing:16"));
        assert_ne!(base, key("other text"));
        let config = PreprocessConfig { overlap: 50, ..Default::default() };
        assert_ne!(base, cache_key(&RawInput::new("some text"), &config, "catalog", "hashing:16"));
        assert_ne!(base, cache_key(&RawInput::new("some text"), &PreprocessConfig::default(), "other", "hashing:16"));
        assert_ne!(base, cache_key(&RawInput::new("some text"), &PreprocessConfig::default(), "catalog", "hashing:32"));
        assert_eq!(base.len(), 64);
    }

    #[test]
    fn builds_once_then_hits() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DocumentCache::open(dir.path(), Duration::from_secs(3600)).unwrap();
        let doc = prepared("A short document about a dataset.");
        let k = key("A short document about a dataset.");
        let (first, hit) = cache.get_or_build::<()>(&k, || Ok(doc.clone())).unwrap();
        assert!(!hit);
        let (second, hit) = cache.get_or_build::<()>(&k, || panic!("must not rebuild")).unwrap();
        assert!(hit);
        assert_eq!(first, second);
        assert_eq!(cache.len().unwrap(), 1);
        assert_eq!(cache.find_document(&doc.document.id).unwrap(), Some(doc));
        assert_eq!(cache.find_document("../../etc/passwd").unwrap(), None);
        let leftovers = fs::read_dir(dir.path().join("entries")).unwrap().count();
        assert_eq!(leftovers, 1, "no temporary files remain");
    }

    #[test]
    fn build_errors_are_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DocumentCache::open(dir.path(), Duration::from_secs(3600)).unwrap();
        let err = cache.get_or_build(&key("x"), || Err("boom")).unwrap_err();
        assert!(matches!(err, CacheError::Build("boom")));
        assert!(cache.is_empty().unwrap());
    }

    #[test]
    fn old_and_corrupt_entries_are_evicted() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DocumentCache::open(dir.path(), Duration::from_secs(30 * 24 * 3600)).unwrap();
        let doc = prepared("Old document.");
        let k = key("Old document.");
        let entry = CacheEntry { key: k.clone(), created_at: now_secs() - 31 * 24 * 3600, value: doc };
        fs::write(cache.entry_path(&k), serde_json::to_vec(&entry).unwrap()).unwrap();
        fs::write(cache.entry_path(&key("corrupt")), b"{not json").unwrap();
        cache.put(&key("fresh"), &prepared("fresh")).unwrap();
        assert_eq!(cache.get(&k).unwrap(), None);
        fs::write(cache.entry_path(&k), serde_json::to_vec(&entry).unwrap()).unwrap();
        assert_eq!(cache.evict_expired().unwrap(), 2);
        assert_eq!(cache.len().unwrap(), 1);
    }

    #[test]
    fn concurrent_identical_builds_run_once() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DocumentCache::open(dir.path(), Duration::from_secs(3600)).unwrap();
        let doc = prepared("Shared document.");
        let k = key("Shared document.");
        let builds = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    cache
                        .get_or_build::<()>(&k, || {
                            builds.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                            std::thread::sleep(Duration::from_millis(20));
                            Ok(doc.clone())
                        })
                        .unwrap()
                });
            }
        });
        assert_eq!(builds.into_inner(), 1);
        assert_eq!(cache.len().unwrap(), 1);
    }
}
