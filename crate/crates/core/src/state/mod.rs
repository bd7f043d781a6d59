//! Event-sourced persistence: per-task timelines, replay, and the two-tier
//! session store.

mod event;
mod log;
mod replay;
mod session;

pub use event::{EventBody, EventKind, TimelineEvent};
pub use log::{EventLog, FileEventLog, MemoryEventLog};
pub use replay::{replay, replay_onto, CorruptTimeline};
pub use session::{
    CacheTier, Clock, DurableTier, FileCache, FileDurable, ManualClock, MemoryCache, MemoryDurable,
    SessionSnapshot, SystemClock, Tier, TwoTierStore, DEFAULT_SESSION_TTL,
};

use crate::protocol::TaskId;

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("task {0} already has a terminal event")]
    TaskTerminated(TaskId),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error("corrupt stored data: {0}")]
    Corrupt(String),
}

impl StateError {
    fn io(e: std::io::Error) -> Self {
        StateError::StorageUnavailable(e.to_string())
    }

    fn poisoned() -> Self {
        StateError::StorageUnavailable("store lock poisoned".into())
    }
}
