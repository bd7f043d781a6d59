use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::log::{file_stem, parse_stem};
use super::StateError;
use crate::maestro::TaskRecord;
use crate::protocol::TaskId;

pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(24 * 60 * 60);

/// Everything needed to resume a task: its full record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub task_id: TaskId,
    pub record: TaskRecord,
}

impl SessionSnapshot {
    pub fn of(record: &TaskRecord) -> Self {
        Self {
            task_id: record.task_id.clone(),
            record: record.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("snapshot serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StateError> {
        serde_json::from_slice(bytes).map_err(|e| StateError::Corrupt(format!("snapshot: {e}")))
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> SystemTime;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> SystemTime {
        SystemTime::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Clone)]
pub struct ManualClock(Arc<Mutex<SystemTime>>);

impl Default for ManualClock {
    fn default() -> Self {
        Self(Arc::new(Mutex::new(SystemTime::now())))
    }
}

impl ManualClock {
    pub fn advance(&self, by: Duration) {
        *self.0.lock().expect("clock poisoned") += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> SystemTime {
        *self.0.lock().expect("clock poisoned")
    }
}

/// Fast tier whose entries expire.
pub trait CacheTier: Send + Sync {
    fn get(&self, key: &TaskId) -> Result<Option<Vec<u8>>, StateError>;
    fn put(&self, key: &TaskId, value: &[u8], ttl: Duration) -> Result<(), StateError>;
    /// Drops the entry as if its TTL had elapsed.
    fn expire(&self, key: &TaskId) -> Result<(), StateError>;
}

/// Slow tier without expiry.
pub trait DurableTier: Send + Sync {
    fn get(&self, key: &TaskId) -> Result<Option<Vec<u8>>, StateError>;
    fn put(&self, key: &TaskId, value: &[u8]) -> Result<(), StateError>;
    fn keys(&self) -> Result<Vec<TaskId>, StateError>;
}

pub struct MemoryCache {
    clock: Arc<dyn Clock>,
    entries: Mutex<HashMap<TaskId, (Vec<u8>, SystemTime)>>,
}

impl MemoryCache {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            entries: Mutex::new(HashMap::new()),
        }
    }
}

impl CacheTier for MemoryCache {
    fn get(&self, key: &TaskId) -> Result<Option<Vec<u8>>, StateError> {
        let mut entries = self.entries.lock().map_err(|_| StateError::poisoned())?;
        let now = self.clock.now();
        match entries.get(key) {
            Some((value, expiry)) if *expiry > now => Ok(Some(value.clone())),
            Some(_) => {
                entries.remove(key);
                Ok(None)
            }
            None => Ok(None),
        }
    }

    fn put(&self, key: &TaskId, value: &[u8], ttl: Duration) -> Result<(), StateError> {
        let expiry = self.clock.now() + ttl;
        self.entries
            .lock()
            .map_err(|_| StateError::poisoned())?
            .insert(key.clone(), (value.to_vec(), expiry));
        Ok(())
    }

    fn expire(&self, key: &TaskId) -> Result<(), StateError> {
        self.entries.lock().map_err(|_| StateError::poisoned())?.remove(key);
        Ok(())
    }
}

fn write_atomic(dir: &Path, target: &Path, bytes: &[u8]) -> Result<(), StateError> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(StateError::io)?;
    tmp.write_all(bytes).map_err(StateError::io)?;
    tmp.persist(target).map_err(|e| StateError::io(e.error))?;
    Ok(())
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, StateError> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(StateError::io(e)),
    }
}

/// Cache entries as files: an 8-byte big-endian expiry (unix millis) then the value.
pub struct FileCache {
    dir: PathBuf,
    clock: Arc<dyn Clock>,
}

impl FileCache {
    pub fn open(dir: &Path, clock: Arc<dyn Clock>) -> Result<Self, StateError> {
        fs::create_dir_all(dir).map_err(StateError::io)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            clock,
        })
    }

    fn path(&self, key: &TaskId) -> PathBuf {
        self.dir.join(format!("{}.cache", file_stem(key)))
    }
}

fn millis(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl CacheTier for FileCache {
    fn get(&self, key: &TaskId) -> Result<Option<Vec<u8>>, StateError> {
        let Some(bytes) = read_optional(&self.path(key))? else {
            return Ok(None);
        };
        if bytes.len() < 8 {
            return Ok(None);
        }
        let expiry = u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"));
        if expiry <= millis(self.clock.now()) {
            let _ = fs::remove_file(self.path(key));
            return Ok(None);
        }
        Ok(Some(bytes[8..].to_vec()))
    }

    fn put(&self, key: &TaskId, value: &[u8], ttl: Duration) -> Result<(), StateError> {
        let mut bytes = millis(self.clock.now() + ttl).to_be_bytes().to_vec();
        bytes.extend_from_slice(value);
        write_atomic(&self.dir, &self.path(key), &bytes)
    }

    fn expire(&self, key: &TaskId) -> Result<(), StateError> {
        match fs::remove_file(self.path(key)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(StateError::io(e)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Default)]
pub struct MemoryDurable {
    entries: Mutex<HashMap<TaskId, Vec<u8>>>,
}

impl DurableTier for MemoryDurable {
    fn get(&self, key: &TaskId) -> Result<Option<Vec<u8>>, StateError> {
        Ok(self.entries.lock().map_err(|_| StateError::poisoned())?.get(key).cloned())
    }

    fn put(&self, key: &TaskId, value: &[u8]) -> Result<(), StateError> {
        self.entries
            .lock()
            .map_err(|_| StateError::poisoned())?
            .insert(key.clone(), value.to_vec());
        Ok(())
    }

    fn keys(&self) -> Result<Vec<TaskId>, StateError> {
        let mut keys: Vec<TaskId> = self.entries.lock().map_err(|_| StateError::poisoned())?.keys().cloned().collect();
        keys.sort();
        Ok(keys)
    }
}

/// `<data>/sessions/<task>.json`, replaced atomically on every write.
#[derive(Debug)]
pub struct FileDurable {
    dir: PathBuf,
}

impl FileDurable {
    pub fn open(data_dir: &Path) -> Result<Self, StateError> {
        let dir = data_dir.join("sessions");
        fs::create_dir_all(&dir).map_err(StateError::io)?;
        Ok(Self { dir })
    }

    fn path(&self, key: &TaskId) -> PathBuf {
        self.dir.join(format!("{}.json", file_stem(key)))
    }
}

impl DurableTier for FileDurable {
    fn get(&self, key: &TaskId) -> Result<Option<Vec<u8>>, StateError> {
        read_optional(&self.path(key))
    }

    fn put(&self, key: &TaskId, value: &[u8]) -> Result<(), StateError> {
        write_atomic(&self.dir, &self.path(key), value)
    }

    fn keys(&self) -> Result<Vec<TaskId>, StateError> {
        let mut keys = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(StateError::io)? {
            let name = entry.map_err(StateError::io)?.file_name();
            if let Some(id) = name.to_string_lossy().strip_suffix(".json").and_then(parse_stem) {
                keys.push(id);
            }
        }
        keys.sort();
        Ok(keys)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Cache,
    Durable,
}

/// TTL cache in front of a durable store.
pub struct TwoTierStore {
    cache: Box<dyn CacheTier>,
    durable: Box<dyn DurableTier>,
    ttl: Duration,
}

impl TwoTierStore {
    pub fn new(cache: Box<dyn CacheTier>, durable: Box<dyn DurableTier>, ttl: Duration) -> Self {
        Self { cache, durable, ttl }
    }

    pub fn in_memory() -> Self {
        Self::new(
            Box::new(MemoryCache::new(Arc::new(SystemClock))),
            Box::<MemoryDurable>::default(),
            DEFAULT_SESSION_TTL,
        )
    }

    /// Durable sessions under `data_dir`, cached in memory.
    pub fn on_disk(data_dir: &Path, ttl: Duration) -> Result<Self, StateError> {
        Ok(Self::new(
            Box::new(MemoryCache::new(Arc::new(SystemClock))),
            Box::new(FileDurable::open(data_dir)?),
            ttl,
        ))
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    /// Writes the durable tier first; the cache only ever holds durable data.
    pub fn put_session(&self, snapshot: &SessionSnapshot) -> Result<(), StateError> {
        let bytes = snapshot.to_bytes();
        self.durable.put(&snapshot.task_id, &bytes)?;
        self.cache.put(&snapshot.task_id, &bytes, self.ttl)
    }

    pub fn get_session(&self, task_id: &TaskId) -> Result<Option<SessionSnapshot>, StateError> {
        match self.get_with_source(task_id)? {
            Some((bytes, _)) => SessionSnapshot::from_bytes(&bytes).map(Some),
            None => Ok(None),
        }
    }

    /// Raw snapshot bytes and the tier that served them; a durable hit repopulates the cache.
    pub fn get_with_source(&self, task_id: &TaskId) -> Result<Option<(Vec<u8>, Tier)>, StateError> {
        if let Some(bytes) = self.cache.get(task_id)? {
            return Ok(Some((bytes, Tier::Cache)));
        }
        match self.durable.get(task_id)? {
            Some(bytes) => {
                self.cache.put(task_id, &bytes, self.ttl)?;
                Ok(Some((bytes, Tier::Durable)))
            }
            None => Ok(None),
        }
    }

    pub fn force_expire(&self, task_id: &TaskId) -> Result<(), StateError> {
        self.cache.expire(task_id)
    }

    pub fn durable_keys(&self) -> Result<Vec<TaskId>, StateError> {
        self.durable.keys()
    }
}
