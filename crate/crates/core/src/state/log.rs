use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::Utc;

use super::event::{EventBody, TimelineEvent};
use super::StateError;
use crate::protocol::{decode_message, encode_message, Message, MessageBody, TaskId, TaskUpdate};

/// Durable, per-task, gapless event log.
///
/// The log assigns `seq` and `timestamp`; per-task ordering relies on the
/// task's single writer.
pub trait EventLog: Send + Sync {
    fn append_event(&self, task_id: &TaskId, body: EventBody) -> Result<TimelineEvent, StateError>;

    /// Events with `seq >= from_seq`, ascending; empty for unknown tasks.
    fn read_timeline(&self, task_id: &TaskId, from_seq: u64) -> Result<Vec<TimelineEvent>, StateError>;

    fn list_tasks(&self) -> Result<Vec<TaskId>, StateError>;
}

fn next_event(task_id: &TaskId, last: Option<&TimelineEvent>, body: EventBody) -> Result<TimelineEvent, StateError> {
    if let Some(last) = last {
        if last.kind().is_terminal() {
            return Err(StateError::TaskTerminated(task_id.clone()));
        }
    }
    Ok(TimelineEvent {
        task_id: task_id.clone(),
        seq: last.map_or(1, |e| e.seq + 1),
        timestamp: Utc::now(),
        body,
    })
}

#[derive(Debug, Default)]
pub struct MemoryEventLog {
    tasks: Mutex<HashMap<TaskId, Vec<TimelineEvent>>>,
}

impl MemoryEventLog {
    pub fn new() -> Self {
        Self::default()
    }
}

impl EventLog for MemoryEventLog {
    fn append_event(&self, task_id: &TaskId, body: EventBody) -> Result<TimelineEvent, StateError> {
        let mut tasks = self.tasks.lock().map_err(|_| StateError::poisoned())?;
        let events = tasks.entry(task_id.clone()).or_default();
        let event = next_event(task_id, events.last(), body)?;
        events.push(event.clone());
        Ok(event)
    }

    fn read_timeline(&self, task_id: &TaskId, from_seq: u64) -> Result<Vec<TimelineEvent>, StateError> {
        let tasks = self.tasks.lock().map_err(|_| StateError::poisoned())?;
        Ok(tasks
            .get(task_id)
            .map(|evs| evs.iter().filter(|e| e.seq >= from_seq).cloned().collect())
            .unwrap_or_default())
    }

    fn list_tasks(&self) -> Result<Vec<TaskId>, StateError> {
        let tasks = self.tasks.lock().map_err(|_| StateError::poisoned())?;
        let mut ids: Vec<TaskId> = tasks.keys().cloned().collect();
        ids.sort();
        Ok(ids)
    }
}

/// Escapes a task id into a safe file stem.
pub(crate) fn file_stem(task_id: &TaskId) -> String {
    let mut out = String::new();
    for (i, b) in task_id.as_str().bytes().enumerate() {
        let plain = b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || (b == b'.' && i > 0);
        if plain {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub(crate) fn parse_stem(stem: &str) -> Option<TaskId> {
    let bytes = stem.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = std::str::from_utf8(bytes.get(i + 1..i + 3)?).ok()?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok().map(TaskId::new)
}

/// One `<task>.jsonl` file per task under `<data>/timelines`, each line an
/// encoded `TaskUpdate` message.
#[derive(Debug)]
pub struct FileEventLog {
    dir: PathBuf,
    // last event per task, loaded lazily
    tails: Mutex<HashMap<TaskId, Option<TimelineEvent>>>,
}

impl FileEventLog {
    pub fn open(data_dir: &Path) -> Result<Self, StateError> {
        let dir = data_dir.join("timelines");
        fs::create_dir_all(&dir).map_err(StateError::io)?;
        Ok(Self {
            dir,
            tails: Mutex::new(HashMap::new()),
        })
    }

    fn path(&self, task_id: &TaskId) -> PathBuf {
        self.dir.join(format!("{}.jsonl", file_stem(task_id)))
    }

    /// Cuts a torn final line so the next append starts on a fresh line.
    fn repair_tail(&self, task_id: &TaskId) -> Result<(), StateError> {
        let path = self.path(task_id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(StateError::io(e)),
        };
        if bytes.is_empty() || bytes.ends_with(b"\n") {
            return Ok(());
        }
        let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        let file = OpenOptions::new().write(true).open(&path).map_err(StateError::io)?;
        file.set_len(keep as u64).map_err(StateError::io)
    }

    fn load(&self, task_id: &TaskId) -> Result<Vec<TimelineEvent>, StateError> {
        let file = match File::open(self.path(task_id)) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StateError::io(e)),
        };
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(StateError::io)?;
        let mut events = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.is_empty() {
                continue;
            }
            match decode_message(line.as_bytes()) {
                Ok(Message {
                    body: MessageBody::TaskUpdate(TaskUpdate { event }),
                    ..
                }) => events.push(event),
                // a torn final line from a crash mid-append is dropped
                Err(_) if i + 1 == lines.len() => break,
                Ok(other) => {
                    return Err(StateError::Corrupt(format!(
                        "{}: line {} holds a {} message",
                        task_id,
                        i + 1,
                        other.kind()
                    )))
                }
                Err(e) => return Err(StateError::Corrupt(format!("{}: line {}: {e}", task_id, i + 1))),
            }
        }
        Ok(events)
    }
}

impl EventLog for FileEventLog {
    fn append_event(&self, task_id: &TaskId, body: EventBody) -> Result<TimelineEvent, StateError> {
        let mut tails = self.tails.lock().map_err(|_| StateError::poisoned())?;
        if !tails.contains_key(task_id) {
            self.repair_tail(task_id)?;
            let last = self.load(task_id)?.pop();
            tails.insert(task_id.clone(), last);
        }
        let tail = tails.get_mut(task_id).expect("inserted above");
        let event = next_event(task_id, tail.as_ref(), body)?;
        let line = encode_message(&Message::new(
            task_id.clone(),
            MessageBody::TaskUpdate(TaskUpdate { event: event.clone() }),
        ));
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path(task_id))
            .map_err(StateError::io)?;
        file.write_all(&line).map_err(StateError::io)?;
        file.flush().map_err(StateError::io)?;
        *tail = Some(event.clone());
        Ok(event)
    }

    fn read_timeline(&self, task_id: &TaskId, from_seq: u64) -> Result<Vec<TimelineEvent>, StateError> {
        // hold the lock so a concurrent append is never observed half-written
        let _guard = self.tails.lock().map_err(|_| StateError::poisoned())?;
        Ok(self.load(task_id)?.into_iter().filter(|e| e.seq >= from_seq).collect())
    }

    fn list_tasks(&self) -> Result<Vec<TaskId>, StateError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(StateError::io)? {
            let name = entry.map_err(StateError::io)?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".jsonl").and_then(parse_stem) {
                ids.push(id);
            }
        }
        ids.sort();
        Ok(ids)
    }
}
