//! Completed-invocation cache. Survives executor restarts so a re-dispatched
//! invocation is answered from here instead of running again.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use tiller_core::protocol::{InvocationId, TaskId, ToolOutcome};

#[derive(Debug)]
pub struct InvocationCache {
    path: Option<PathBuf>,
    done: BTreeMap<InvocationId, ToolOutcome>,
}

impl InvocationCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            done: BTreeMap::new(),
        }
    }

    /// Loads `<dir>/<task_id>.done.json`, starting empty if it is missing or unreadable.
    pub fn open(dir: &Path, task_id: &TaskId) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let name: String = task_id
            .as_str()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let path = dir.join(format!("{name}.done.json"));
        let done = std::fs::read(&path)
            .ok()
            .and_then(|bytes| serde_json::from_slice(&bytes).ok())
            .unwrap_or_default();
        Ok(Self { path: Some(path), done })
    }

    pub fn get(&self, id: &InvocationId) -> Option<&ToolOutcome> {
        self.done.get(id)
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    /// Records an outcome; written to disk before the result is sent.
    pub fn put(&mut self, id: InvocationId, outcome: ToolOutcome) -> std::io::Result<()> {
        self.done.insert(id, outcome);
        let Some(path) = &self.path else { return Ok(()) };
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&serde_json::to_vec(&self.done).expect("outcomes serialize"))?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }
}
