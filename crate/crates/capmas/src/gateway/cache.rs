//! Keyed response cache: one file per entry, filename = key hex digest,
//! content = canonical JSON. Writes go through a temp file and an atomic
//! rename under a single writer lock.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use super::{CacheEntry, GatewayError};

pub(crate) enum ResponseCache {
    Memory(Mutex<HashMap<String, CacheEntry>>),
    Disk { dir: PathBuf, writer: Mutex<()> },
}

impl ResponseCache {
    pub fn memory() -> Self {
        ResponseCache::Memory(Mutex::new(HashMap::new()))
    }

    pub fn disk(dir: PathBuf) -> Result<Self, GatewayError> {
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache::Disk {
            dir,
            writer: Mutex::new(()),
        })
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        match self {
            ResponseCache::Memory(map) => map.lock().unwrap().get(key).cloned(),
            ResponseCache::Disk { dir, .. } => {
                let bytes = fs::read(dir.join(key)).ok()?;
                serde_json::from_slice(&bytes).ok()
            }
        }
    }

    pub fn put(&self, entry: CacheEntry) -> Result<(), GatewayError> {
        match self {
            ResponseCache::Memory(map) => {
                map.lock().unwrap().insert(entry.key.clone(), entry);
            }
            ResponseCache::Disk { dir, writer } => {
                let _guard = writer.lock().unwrap();
                let body = serde_json::to_vec(&entry)
                    .map_err(|e| GatewayError::InvalidScript(format!("cache encode: {e}")))?;
                let tmp = dir.join(format!(".tmp-{}", entry.key));
                fs::write(&tmp, body)?;
                fs::rename(&tmp, dir.join(&entry.key))?;
            }
        }
        Ok(())
    }
}
