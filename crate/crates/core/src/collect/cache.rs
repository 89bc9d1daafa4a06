//! On-disk response cache: one JSON file per exchange, keyed by SHA-256.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::write_atomic;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt: String,
    pub temperature: f64,
    pub model_id: String,
    pub sample: u32,
    pub response: String,
}

/// Cache key over `(model_id, temperature, prompt, sample)`.
pub fn cache_key(model_id: &str, temperature: f64, prompt: &str, sample: u32) -> String {
    let mut h = Sha256::new();
    for part in [model_id.as_bytes(), &temperature.to_le_bytes(), prompt.as_bytes(), &sample.to_le_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

/// A directory of cached exchanges, or a no-op cache. Files are written
/// atomically, so concurrent writers of one key never leave a torn file.
#[derive(Debug, Clone, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn new(dir: Option<&Path>) -> Self {
        Self { dir: dir.map(Path::to_path_buf) }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    /// Cached response, or `None` on a miss. Unreadable or mismatching
    /// entries count as misses and are overwritten by the next `put`.
    pub fn get(&self, model_id: &str, temperature: f64, prompt: &str, sample: u32) -> Option<String> {
        let path = self.path(&cache_key(model_id, temperature, prompt, sample))?;
        let text = std::fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(e) if e.prompt == prompt && e.model_id == model_id && e.temperature == temperature && e.sample == sample => {
                Some(e.response)
            }
            _ => {
                log::warn!("ignoring corrupt cache entry {}", path.display());
                None
            }
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<()> {
        let Some(path) = self.path(&cache_key(&entry.model_id, entry.temperature, &entry.prompt, entry.sample)) else {
            return Ok(());
        };
        let json = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        write_atomic(&path, &json)
    }
}
