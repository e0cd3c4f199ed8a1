//! Content-addressed stage cache.
//!
//! Each stage output is stored under `<dir>/<stage>-<key>.<ext>`, where the
//! key is a SHA-256 over everything the stage depends on. Writes go through a
//! temporary file and a rename so a killed run never leaves a partial entry.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// Hash a sequence of byte strings, length-prefixed so boundaries matter.
pub fn content_key(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone)]
pub struct StageCache {
    dir: Option<PathBuf>,
}

impl StageCache {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating cache {}", dir.display()))?;
        Ok(StageCache {
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn disabled() -> Self {
        StageCache { dir: None }
    }

    fn entry(&self, stage: &str, key: &str, ext: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{stage}-{key}.{ext}")))
    }

    /// Path of an existing entry.
    pub fn lookup(&self, stage: &str, key: &str, ext: &str) -> Option<PathBuf> {
        let path = self.entry(stage, key, ext)?;
        path.is_file().then_some(path)
    }

    pub fn store(&self, stage: &str, key: &str, ext: &str, bytes: &[u8]) -> Result<()> {
        let Some(path) = self.entry(stage, key, ext) else {
            return Ok(());
        };
        write_atomic(&path, bytes)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_respect_part_boundaries() {
        assert_ne!(content_key(&[b"ab", b"c"]), content_key(&[b"a", b"bc"]));
        assert_eq!(content_key(&[b"x"]), content_key(&[b"x"]));
        assert_eq!(content_key(&[]).len(), 64);
    }

    #[test]
    fn store_then_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let cache = StageCache::new(dir.path()).unwrap();
        assert!(cache.lookup("terms", "k1", "txt").is_none());
        cache.store("terms", "k1", "txt", b"hello").unwrap();
        let hit = cache.lookup("terms", "k1", "txt").unwrap();
        assert_eq!(fs::read(hit).unwrap(), b"hello");

        let off = StageCache::disabled();
        off.store("terms", "k1", "txt", b"x").unwrap();
        assert!(off.lookup("terms", "k1", "txt").is_none());
    }
}
