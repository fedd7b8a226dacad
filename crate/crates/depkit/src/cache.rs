//! Content-addressed artifact cache.
//!
//! Entries are directories named by the SHA-256 of a JSON key description.
//! An entry is filled in a private temporary directory and renamed into
//! place, so concurrent writers never expose partial entries; if two
//! writers race, the first rename wins and the loser's copy is discarded.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Environment variable overriding the cache root.
pub const CACHE_ENV: &str = "DEPKIT_CACHE";

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON encoding of `value`.
pub fn key_of<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("cache keys serialize"))
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `$DEPKIT_CACHE` when set, else `fallback`.
    pub fn from_env(fallback: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Self::new(dir),
            _ => Self::new(fallback),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, kind: &str, key: &str) -> PathBuf {
        self.root.join(kind).join(key)
    }

    pub fn lookup(&self, kind: &str, key: &str) -> Option<PathBuf> {
        let path = self.entry_path(kind, key);
        path.is_dir().then_some(path)
    }

    /// Returns the entry, creating it with `fill` if absent.
    pub fn get_or_publish<F>(&self, kind: &str, key: &str, fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        if let Some(hit) = self.lookup(kind, key) {
            return Ok(hit);
        }
        self.publish(kind, key, fill)
    }

    /// Fills a fresh temporary directory and renames it to the entry path.
    pub fn publish<F>(&self, kind: &str, key: &str, fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let tmp_root = self.root.join(".tmp");
        let tmp = tmp_root.join(format!("{key}.{}.{}", std::process::id(), TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)));
        fs::create_dir_all(&tmp).map_err(Error::io(&tmp))?;
        if let Err(e) = fill(&tmp) {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        let dest = self.entry_path(kind, key);
        let parent = dest.parent().expect("entry has a parent");
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
        match fs::rename(&tmp, &dest) {
            Ok(()) => Ok(dest),
            Err(_) if dest.is_dir() => {
                let _ = fs::remove_dir_all(&tmp);
                Ok(dest)
            }
            Err(e) => {
                let _ = fs::remove_dir_all(&tmp);
                Err(Error::Io { path: dest, source: e })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn publish_then_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let key = key_of(&("encoder", 1u64));
        assert!(cache.lookup("runs", &key).is_none());
        let path = cache.publish("runs", &key, |tmp| fs::write(tmp.join("a"), "x").map_err(Error::io(tmp))).unwrap();
        assert_eq!(fs::read_to_string(path.join("a")).unwrap(), "x");
        let mut called = false;
        let again = cache
            .get_or_publish("runs", &key, |_| {
                called = true;
                Ok(())
            })
            .unwrap();
        assert_eq!(again, path);
        assert!(!called);
    }

    #[test]
    fn failed_fill_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let err = cache.publish("runs", "k", |_| Err(Error::Train("boom".into())));
        assert!(err.is_err());
        assert!(cache.lookup("runs", "k").is_none());
        assert_eq!(fs::read_dir(dir.path().join(".tmp")).unwrap().count(), 0);
    }

    #[test]
    fn racing_publishers_agree() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let paths: Vec<PathBuf> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..8)
                .map(|i| {
                    let cache = &cache;
                    s.spawn(move || cache.publish("runs", "same", |tmp| fs::write(tmp.join("v"), format!("{i}")).map_err(Error::io(tmp))).unwrap())
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(paths.iter().all(|p| p == &paths[0]));
        let v = fs::read_to_string(paths[0].join("v")).unwrap();
        assert!(v.parse::<usize>().unwrap() < 8);
    }

    #[test]
    fn keys_are_stable() {
        assert_eq!(key_of(&[1, 2, 3]), key_of(&vec![1, 2, 3]));
        assert_ne!(key_of(&[1, 2, 3]), key_of(&[3, 2, 1]));
        assert_eq!(key_of("").len(), 64);
    }
}
