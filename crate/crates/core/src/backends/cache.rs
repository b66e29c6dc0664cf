//! Append-only, content-addressed store of backend responses.
//!
//! Each entry lives at `<dir>/<digest[0..2]>/<digest>.json` and records the
//! digest, the full request, the full response and the time it was written.
//! Writes go through a temporary file in the same directory followed by a
//! rename, so readers never observe a partial entry and concurrent writers of
//! the same key are idempotent.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{BackendError, Capability};

/// SHA-256 over the canonical JSON of (capability, model, payload, parameters).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(capability: Capability, model_id: &str, payload: &Value, params: &Value) -> Self {
        #[derive(Serialize)]
        struct Canonical<'a> {
            v: u32,
            capability: Capability,
            model_id: &'a str,
            payload: &'a Value,
            params: &'a Value,
        }
        let canonical = Canonical { v: 1, capability, model_id, payload, params };
        let bytes = serde_json::to_vec(&canonical).expect("json values always serialize");
        Self(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub digest: String,
    pub capability: Capability,
    pub request: Value,
    pub response: Value,
    pub timestamp: String,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let d = key.as_str();
        self.dir.join(&d[..2]).join(format!("{d}.json"))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, BackendError> {
        let path = self.path_for(key);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| BackendError::Cache(format!("corrupt entry {}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(BackendError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    pub fn put(&self, key: &CacheKey, capability: Capability, request: Value, response: Value) -> Result<(), BackendError> {
        let path = self.path_for(key);
        if path.exists() {
            return Ok(());
        }
        let parent = path.parent().expect("entry path has a parent");
        let io = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", path.display()));
        fs::create_dir_all(parent).map_err(io)?;
        let entry = CacheEntry {
            digest: key.as_str().to_string(),
            capability,
            request,
            response,
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io)?;
        serde_json::to_writer_pretty(&mut tmp, &entry)
            .map_err(|e| BackendError::Cache(e.to_string()))?;
        tmp.write_all(b"\n").map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        let Ok(shards) = fs::read_dir(&self.dir) else { return 0 };
        shards
            .filter_map(Result::ok)
            .filter_map(|s| fs::read_dir(s.path()).ok())
            .map(|entries| {
                entries
                    .filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
