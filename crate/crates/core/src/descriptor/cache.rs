//! Append-only JSONL log of model responses with an in-memory index.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{DescriptorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheKind {
    Item,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub kind: CacheKind,
    pub index: usize,
    pub model: String,
    pub prompt_hash: String,
    pub text: String,
}

type Key = (CacheKind, usize, String, String);

fn key_of(e: &CacheEntry) -> Key {
    (e.kind, e.index, e.model.clone(), e.prompt_hash.clone())
}

pub struct DescribeCache {
    path: Option<PathBuf>,
    index: RwLock<HashMap<Key, String>>,
    writer: Mutex<Option<File>>,
}

impl DescribeCache {
    /// Cache that lives only in memory.
    pub fn in_memory() -> Self {
        DescribeCache {
            path: None,
            index: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads every complete record of `path` (creating it if absent) and opens
    /// it for appending. Unparsable lines, such as a record cut short by an
    /// interrupted run, are skipped.
    pub fn open(path: &Path) -> Result<Self> {
        let io = |e| DescriptorError::io(path, e);
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io)?;
        let mut index = HashMap::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CacheEntry>(line) {
                Ok(e) => {
                    index.insert(key_of(&e), e.text);
                }
                Err(err) => log::warn!("{}: skipping line {}: {err}", path.display(), k + 1),
            }
        }
        if !text.is_empty() && !text.ends_with('\n') {
            file.write_all(b"\n").map_err(io)?;
        }
        Ok(DescribeCache {
            path: Some(path.to_path_buf()),
            index: RwLock::new(index),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, kind: CacheKind, index: usize, model: &str, prompt_hash: &str) -> Option<String> {
        let key = (kind, index, model.to_string(), prompt_hash.to_string());
        self.index.read().unwrap().get(&key).cloned()
    }

    pub fn put(&self, entry: CacheEntry) -> Result<()> {
        let mut writer = self.writer.lock().unwrap();
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&entry).expect("cache entries serialize");
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new(""));
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| DescriptorError::io(path, e))?;
        }
        self.index.write().unwrap().insert(key_of(&entry), entry.text);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(index: usize, text: &str) -> CacheEntry {
        CacheEntry {
            kind: CacheKind::Item,
            index,
            model: "m".into(),
            prompt_hash: "h".into(),
            text: text.into(),
        }
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = DescribeCache::open(&path).unwrap();
            c.put(entry(0, "zero")).unwrap();
            c.put(entry(1, "one")).unwrap();
        }
        let c = DescribeCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(CacheKind::Item, 1, "m", "h").as_deref(), Some("one"));
        assert_eq!(c.get(CacheKind::User, 1, "m", "h"), None);
        assert_eq!(c.get(CacheKind::Item, 1, "other", "h"), None);
    }

    #[test]
    fn truncated_tail_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let good = serde_json::to_string(&entry(0, "zero")).unwrap();
        std::fs::write(&path, format!("{good}\n{{\"kind\":\"item\",\"ind")).unwrap();
        let c = DescribeCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        c.put(entry(3, "three")).unwrap();
        drop(c);
        let c = DescribeCache::open(&path).unwrap();
        assert_eq!(c.get(CacheKind::Item, 3, "m", "h").as_deref(), Some("three"));
    }
}
