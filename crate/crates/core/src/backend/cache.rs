//! Response cache keyed on the exact upstream request.
//!
//! The on-disk store is an append-only JSONL log of
//! `{key_hash_hex, logits, source, timestamp}` records. Later records for
//! the same key win; unreadable lines are skipped, so a corrupt entry is
//! simply a miss that gets re-fetched and re-appended.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendDescriptor, BackendError, ClassLogits, LogitSource, ProbeContext};
use crate::taskgen::CoordSpace;
use crate::{Point, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key_hash_hex: String,
    pub logits: Vec<f64>,
    pub source: LogitSource,
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_top_tokens: Option<Vec<(String, f64)>>,
}

#[derive(Default)]
struct Store {
    entries: HashMap<String, ClassLogits>,
    file: Option<File>,
}

pub struct CachedBackend<B> {
    inner: B,
    store: Mutex<Store>,
    path: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    /// Cache that lives only as long as this value.
    pub fn in_memory(inner: B) -> Self {
        CachedBackend {
            inner,
            store: Mutex::new(Store::default()),
            path: None,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    /// Opens (or creates) the record log at `path` and loads it.
    pub fn open(inner: B, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                let Ok(record) = serde_json::from_str::<CacheRecord>(&line) else {
                    log::warn!("skipping unreadable cache record in {}", path.display());
                    continue;
                };
                entries.insert(
                    record.key_hash_hex,
                    ClassLogits {
                        scores: record.logits,
                        source: record.source,
                        raw_top_tokens: record.raw_top_tokens,
                    },
                );
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(CachedBackend {
            inner,
            store: Mutex::new(Store {
                entries,
                file: Some(file),
            }),
            path: Some(path),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.store.lock().expect("cache store").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// SHA-256 over the backend fingerprint (endpoint, model, decode
    /// parameters, mode, kind settings) and the request payload.
    pub fn key(&self, ctx: &ProbeContext<'_>, query: Point) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.inner.fingerprint().as_bytes());
        hasher.update([0u8]);
        hasher.update(self.inner.payload(ctx, query));
        hex::encode(hasher.finalize())
    }

    fn lookup(&self, key: &str, num_classes: usize) -> Option<ClassLogits> {
        let store = self.store.lock().expect("cache store");
        let hit = store.entries.get(key).filter(|l| l.check(num_classes).is_ok()).cloned();
        if hit.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
        }
        hit
    }

    fn insert(&self, key: String, logits: &ClassLogits) {
        let mut store = self.store.lock().expect("cache store");
        if let Some(file) = store.file.as_mut() {
            let record = CacheRecord {
                key_hash_hex: key.clone(),
                logits: logits.scores.clone(),
                source: logits.source,
                timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
                raw_top_tokens: logits.raw_top_tokens.clone(),
            };
            let line = serde_json::to_string(&record).expect("cache record serializes");
            if let Err(e) = writeln!(file, "{line}") {
                log::warn!("cache append failed: {e}");
            }
        }
        store.entries.insert(key, logits.clone());
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn space(&self) -> CoordSpace {
        self.inner.space()
    }

    fn payload(&self, ctx: &ProbeContext<'_>, query: Point) -> Vec<u8> {
        self.inner.payload(ctx, query)
    }

    fn classify_logits(&self, ctx: &ProbeContext<'_>, query: Point) -> std::result::Result<ClassLogits, BackendError> {
        let key = self.key(ctx, query);
        if let Some(hit) = self.lookup(&key, ctx.num_classes()) {
            return Ok(hit);
        }
        let fresh = self.inner.classify_logits(ctx, query)?;
        if fresh.check(ctx.num_classes()).is_ok() {
            self.insert(key, &fresh);
        }
        Ok(fresh)
    }

    fn batched(&self) -> bool {
        self.inner.batched()
    }

    fn classify_many(
        &self,
        ctx: &ProbeContext<'_>,
        queries: &[Point],
    ) -> Vec<std::result::Result<ClassLogits, BackendError>> {
        let k = ctx.num_classes();
        let keys: Vec<String> = queries.iter().map(|q| self.key(ctx, *q)).collect();
        let mut out: Vec<Option<std::result::Result<ClassLogits, BackendError>>> =
            keys.iter().map(|key| self.lookup(key, k).map(Ok)).collect();
        let missing: Vec<usize> = (0..queries.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let miss_queries: Vec<Point> = missing.iter().map(|&i| queries[i]).collect();
            let fetched = self.inner.classify_many(ctx, &miss_queries);
            for (&i, answer) in missing.iter().zip(fetched) {
                if let Ok(logits) = &answer {
                    if logits.check(k).is_ok() {
                        self.insert(keys[i].clone(), logits);
                    }
                }
                out[i] = Some(answer);
            }
        }
        out.into_iter().map(|a| a.expect("every query answered")).collect()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}
