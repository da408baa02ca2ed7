//! Tile object stores with per-key read-after-write consistency.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use lambdapack_core::tile::TileError;
use lambdapack_core::{Tile, TileRef};
use parking_lot::RwLock;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TileKey {
    pub run_id: String,
    pub matrix: String,
    pub index: Vec<i64>,
}

impl TileKey {
    pub fn new(run_id: &str, matrix: &str, index: &[i64]) -> Self {
        Self { run_id: run_id.into(), matrix: matrix.into(), index: index.to_vec() }
    }

    pub fn of(run_id: &str, t: &TileRef) -> Self {
        Self::new(run_id, &t.matrix, &t.index)
    }

    /// `i0_i1_...`; negative indices keep their sign, which stays unambiguous.
    pub fn index_name(&self) -> String {
        let parts: Vec<String> = self.index.iter().map(i64::to_string).collect();
        parts.join("_")
    }

    fn relative_path(&self) -> PathBuf {
        Path::new(&self.run_id).join(&self.matrix).join(format!("{}.tile", self.index_name()))
    }
}

impl fmt::Display for TileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.run_id, self.matrix, self.index_name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no tile at {0}")]
    Missing(TileKey),
    #[error("{0} already holds different bytes")]
    Conflict(TileKey),
    #[error("refusing to store non-finite values at {0}")]
    NonFinite(TileKey),
    #[error("corrupt tile at {key}: {source}")]
    Corrupt { key: TileKey, source: TileError },
    #[error("storage failure at {key}: {source}")]
    Io { key: TileKey, source: io::Error },
}

/// Running byte and operation totals of one store.
#[derive(Debug, Default)]
pub struct StoreCounters {
    bytes_read: AtomicU64,
    bytes_written: AtomicU64,
    gets: AtomicU64,
    puts: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub gets: u64,
    pub puts: u64,
}

impl StoreStats {
    /// Activity since `earlier`.
    pub fn since(&self, earlier: &StoreStats) -> StoreStats {
        StoreStats {
            bytes_read: self.bytes_read - earlier.bytes_read,
            bytes_written: self.bytes_written - earlier.bytes_written,
            gets: self.gets - earlier.gets,
            puts: self.puts - earlier.puts,
        }
    }
}

impl StoreCounters {
    fn read(&self, n: usize) {
        self.gets.fetch_add(1, Ordering::Relaxed);
        self.bytes_read.fetch_add(n as u64, Ordering::Relaxed);
    }

    fn wrote(&self, n: usize) {
        self.puts.fetch_add(1, Ordering::Relaxed);
        self.bytes_written.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> StoreStats {
        StoreStats {
            bytes_read: self.bytes_read.load(Ordering::Relaxed),
            bytes_written: self.bytes_written.load(Ordering::Relaxed),
            gets: self.gets.load(Ordering::Relaxed),
            puts: self.puts.load(Ordering::Relaxed),
        }
    }
}

/// Raw byte storage keyed by tile. Implementations must publish each key
/// atomically and refuse to replace existing bytes with different ones.
pub trait ObjectStore: Send + Sync {
    fn put_bytes(&self, key: &TileKey, bytes: &[u8]) -> Result<(), StoreError>;
    fn get_bytes(&self, key: &TileKey) -> Result<Vec<u8>, StoreError>;
    fn exists(&self, key: &TileKey) -> bool;
    fn stats(&self) -> StoreStats;

    fn put_tile(&self, key: &TileKey, t: &Tile) -> Result<(), StoreError> {
        if !t.is_finite() {
            return Err(StoreError::NonFinite(key.clone()));
        }
        self.put_bytes(key, &t.encode())
    }

    fn get_tile(&self, key: &TileKey) -> Result<Tile, StoreError> {
        let bytes = self.get_bytes(key)?;
        Tile::decode(&bytes).map_err(|source| StoreError::Corrupt { key: key.clone(), source })
    }
}

impl<S: ObjectStore + ?Sized> ObjectStore for Arc<S> {
    fn put_bytes(&self, key: &TileKey, bytes: &[u8]) -> Result<(), StoreError> {
        (**self).put_bytes(key, bytes)
    }
    fn get_bytes(&self, key: &TileKey) -> Result<Vec<u8>, StoreError> {
        (**self).get_bytes(key)
    }
    fn exists(&self, key: &TileKey) -> bool {
        (**self).exists(key)
    }
    fn stats(&self) -> StoreStats {
        (**self).stats()
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    tiles: RwLock<HashMap<TileKey, Arc<Vec<u8>>>>,
    counters: StoreCounters,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tiles.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ObjectStore for MemoryStore {
    fn put_bytes(&self, key: &TileKey, bytes: &[u8]) -> Result<(), StoreError> {
        let mut tiles = self.tiles.write();
        if let Some(old) = tiles.get(key) {
            if old.as_slice() != bytes {
                return Err(StoreError::Conflict(key.clone()));
            }
        } else {
            tiles.insert(key.clone(), Arc::new(bytes.to_vec()));
        }
        self.counters.wrote(bytes.len());
        Ok(())
    }

    fn get_bytes(&self, key: &TileKey) -> Result<Vec<u8>, StoreError> {
        let bytes = self.tiles.read().get(key).cloned().ok_or_else(|| StoreError::Missing(key.clone()))?;
        self.counters.read(bytes.len());
        Ok(bytes.as_ref().clone())
    }

    fn exists(&self, key: &TileKey) -> bool {
        self.tiles.read().contains_key(key)
    }

    fn stats(&self) -> StoreStats {
        self.counters.snapshot()
    }
}

/// Files under `<root>/<run>/<matrix>/<i0>_<i1>.tile`.
///
/// A put writes a temporary file in the target directory and hard-links it
/// into place, which fails if the name already exists; the tile therefore
/// appears whole or not at all, and concurrent puts cannot overwrite.
#[derive(Debug)]
pub struct FsStore {
    root: PathBuf,
    counters: StoreCounters,
    tmp_seq: AtomicU64,
}

impl FsStore {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, counters: StoreCounters::default(), tmp_seq: AtomicU64::new(0) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, key: &TileKey) -> PathBuf {
        self.root.join(key.relative_path())
    }
}

impl ObjectStore for FsStore {
    fn put_bytes(&self, key: &TileKey, bytes: &[u8]) -> Result<(), StoreError> {
        let io_err = |source| StoreError::Io { key: key.clone(), source };
        let path = self.path_of(key);
        let dir = path.parent().expect("tile path has a parent");
        fs::create_dir_all(dir).map_err(io_err)?;
        let seq = self.tmp_seq.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{}.{}.{seq}.tmp", key.index_name(), std::process::id()));
        let publish = || -> io::Result<bool> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            match fs::hard_link(&tmp, &path) {
                Ok(()) => Ok(true),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Ok(false),
                Err(e) => Err(e),
            }
        };
        let result = publish();
        let _ = fs::remove_file(&tmp);
        if !result.map_err(io_err)? {
            let old = fs::read(&path).map_err(io_err)?;
            if old != bytes {
                return Err(StoreError::Conflict(key.clone()));
            }
        }
        self.counters.wrote(bytes.len());
        Ok(())
    }

    fn get_bytes(&self, key: &TileKey) -> Result<Vec<u8>, StoreError> {
        match fs::read(self.path_of(key)) {
            Ok(b) => {
                self.counters.read(b.len());
                Ok(b)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::Missing(key.clone())),
            Err(source) => Err(StoreError::Io { key: key.clone(), source }),
        }
    }

    fn exists(&self, key: &TileKey) -> bool {
        self.path_of(key).is_file()
    }

    fn stats(&self) -> StoreStats {
        self.counters.snapshot()
    }
}

/// Simulated remote-storage cost, applied before each operation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatencyConfig {
    pub per_op: Duration,
    /// Transfer rate cap; `None` means unlimited.
    pub bytes_per_sec: Option<f64>,
}

impl LatencyConfig {
    pub fn delay_for(&self, bytes: usize) -> Duration {
        let transfer = match self.bytes_per_sec {
            Some(r) if r > 0.0 => Duration::from_secs_f64(bytes as f64 / r),
            _ => Duration::ZERO,
        };
        self.per_op + transfer
    }
}

/// Wraps a store and sleeps per operation. A put becomes visible only once
/// its delay has elapsed.
pub struct LatencyStore<S> {
    inner: S,
    cfg: LatencyConfig,
}

impl<S: ObjectStore> LatencyStore<S> {
    pub fn new(inner: S, cfg: LatencyConfig) -> Self {
        Self { inner, cfg }
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

fn pause(d: Duration) {
    if !d.is_zero() {
        std::thread::sleep(d);
    }
}

impl<S: ObjectStore> ObjectStore for LatencyStore<S> {
    fn put_bytes(&self, key: &TileKey, bytes: &[u8]) -> Result<(), StoreError> {
        pause(self.cfg.delay_for(bytes.len()));
        self.inner.put_bytes(key, bytes)
    }

    fn get_bytes(&self, key: &TileKey) -> Result<Vec<u8>, StoreError> {
        let b = self.inner.get_bytes(key)?;
        pause(self.cfg.delay_for(b.len()));
        Ok(b)
    }

    fn exists(&self, key: &TileKey) -> bool {
        pause(self.cfg.per_op);
        self.inner.exists(key)
    }

    fn stats(&self) -> StoreStats {
        self.inner.stats()
    }
}
