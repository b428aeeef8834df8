use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{EmbeddingRecord, TokenEmbeddingSet};
use crate::error::{Error, Result};

/// Directory of cached embeddings, one file per `(item id, fields hash)`.
///
/// Each file holds a single embedding record line. Writes go through a
/// temporary file and an atomic rename, so concurrent writers of the same
/// key never leave a torn entry behind.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        Ok(EmbeddingCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, item_id: &str, fields_hash: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(item_id.as_bytes());
        h.update([0x1f]);
        h.update(fields_hash.as_bytes());
        self.dir.join(format!("{}.json", &hex::encode(h.finalize())[..32]))
    }

    /// Returns the cached set, or `None` on a miss. Unreadable or
    /// inconsistent entries are evicted and reported as misses.
    pub fn get(&self, item_id: &str, fields_hash: &str) -> Option<TokenEmbeddingSet> {
        let path = self.entry_path(item_id, fields_hash);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cache entry {} unreadable: {e}", path.display());
                return None;
            }
        };
        let parsed = serde_json::from_str::<EmbeddingRecord>(text.trim_end())
            .map_err(Error::from)
            .and_then(|r| {
                if r.id != item_id || r.fields_hash != fields_hash {
                    return Err(Error::invalid("cache key does not match entry"));
                }
                r.into_set()
            });
        match parsed {
            Ok(set) => Some(set),
            Err(e) => {
                log::warn!("evicting corrupt cache entry {}: {e}", path.display());
                let _ = std::fs::remove_file(&path);
                None
            }
        }
    }

    pub fn put(&self, set: &TokenEmbeddingSet, fields_hash: &str) -> Result<()> {
        let path = self.entry_path(set.item_id(), fields_hash);
        let mut line = serde_json::to_string(&set.to_record(fields_hash))?;
        line.push('\n');
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)
            .map_err(|e| Error::io(format!("creating temp file in {}", self.dir.display()), e))?;
        tmp.write_all(line.as_bytes())
            .map_err(|e| Error::io("writing cache entry", e))?;
        tmp.persist(&path)
            .map_err(|e| Error::io(format!("persisting {}", path.display()), e.error))?;
        Ok(())
    }
}
