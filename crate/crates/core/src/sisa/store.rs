use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::checkpoint::Checkpoint;
use super::SisaError;

/// Where stage checkpoints live. Shards may save concurrently.
pub trait CheckpointStore: Sync {
    fn save(&self, checkpoint: &Checkpoint) -> Result<(), SisaError>;
    fn load(&self, shard: usize, stage: usize) -> Result<Option<Checkpoint>, SisaError>;
}

/// Serialized checkpoints held in memory.
#[derive(Debug, Default)]
pub struct MemoryStore {
    inner: Mutex<BTreeMap<(usize, usize), Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn remove(&self, shard: usize, stage: usize) -> bool {
        self.inner.lock().expect("store lock").remove(&(shard, stage)).is_some()
    }

    /// Digest of every stored checkpoint, keyed by (shard, stage).
    pub fn digests(&self) -> BTreeMap<(usize, usize), u64> {
        self.inner
            .lock()
            .expect("store lock")
            .iter()
            .map(|(k, b)| (*k, u64::from_le_bytes(b[b.len() - 8..].try_into().expect("8 bytes"))))
            .collect()
    }
}

impl Clone for MemoryStore {
    fn clone(&self) -> Self {
        Self {
            inner: Mutex::new(self.inner.lock().expect("store lock").clone()),
        }
    }
}

impl CheckpointStore for MemoryStore {
    fn save(&self, checkpoint: &Checkpoint) -> Result<(), SisaError> {
        let key = (checkpoint.shard as usize, checkpoint.stage as usize);
        self.inner.lock().expect("store lock").insert(key, checkpoint.to_bytes());
        Ok(())
    }

    fn load(&self, shard: usize, stage: usize) -> Result<Option<Checkpoint>, SisaError> {
        let guard = self.inner.lock().expect("store lock");
        guard.get(&(shard, stage)).map(|b| Checkpoint::from_bytes(b)).transpose()
    }
}

/// One file per checkpoint under `root/shard_XX/stage_YY.ckpt`, replaced atomically.
#[derive(Clone, Debug)]
pub struct DirStore {
    root: PathBuf,
}

impl DirStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, SisaError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| SisaError::Io {
            path: root.clone(),
            source: e,
        })?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, shard: usize, stage: usize) -> PathBuf {
        self.root.join(format!("shard_{shard:02}")).join(format!("stage_{stage:02}.ckpt"))
    }
}

impl CheckpointStore for DirStore {
    fn save(&self, checkpoint: &Checkpoint) -> Result<(), SisaError> {
        let path = self.path(checkpoint.shard as usize, checkpoint.stage as usize);
        let dir = path.parent().expect("checkpoint path has a parent");
        let io = |p: &Path, e: std::io::Error| SisaError::Io {
            path: p.to_path_buf(),
            source: e,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io(dir, e))?;
        tmp.write_all(&checkpoint.to_bytes()).map_err(|e| io(&path, e))?;
        tmp.as_file().sync_all().map_err(|e| io(&path, e))?;
        tmp.persist(&path).map_err(|e| io(&path, e.error))?;
        Ok(())
    }

    fn load(&self, shard: usize, stage: usize) -> Result<Option<Checkpoint>, SisaError> {
        let path = self.path(shard, stage);
        match fs::read(&path) {
            Ok(bytes) => Checkpoint::from_bytes(&bytes)
                .map(Some)
                .map_err(|e| SisaError::Checkpoint(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(SisaError::Io { path, source: e }),
        }
    }
}
