use super::event::TimelineEvent;
use crate::maestro::{ApplyError, TaskRecord};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorruptTimeline {
    #[error("gap in timeline: expected seq {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
    #[error("duplicate seq {seq}")]
    Duplicate { seq: u64 },
    #[error("event {seq} belongs to task {found}, not {expected}")]
    ForeignTask { seq: u64, expected: String, found: String },
    #[error(transparent)]
    Illegal(#[from] ApplyError),
}

/// Folds a timeline prefix into the task record it describes.
///
/// An empty prefix yields `None`, the record before creation.
pub fn replay(events: &[TimelineEvent]) -> Result<Option<TaskRecord>, CorruptTimeline> {
    let mut record: Option<TaskRecord> = None;
    for event in events {
        check_seq(record.as_ref().map_or(0, |r| r.last_seq), event)?;
        match &mut record {
            None => record = Some(TaskRecord::genesis(event)?),
            Some(r) => {
                if r.task_id != event.task_id {
                    return Err(CorruptTimeline::ForeignTask {
                        seq: event.seq,
                        expected: r.task_id.to_string(),
                        found: event.task_id.to_string(),
                    });
                }
                r.apply(event)?
            }
        }
    }
    Ok(record)
}

/// Continues a fold from an existing record (a snapshot) over later events.
pub fn replay_onto(mut record: TaskRecord, events: &[TimelineEvent]) -> Result<TaskRecord, CorruptTimeline> {
    for event in events {
        check_seq(record.last_seq, event)?;
        record.apply(event)?;
    }
    Ok(record)
}

fn check_seq(last: u64, event: &TimelineEvent) -> Result<(), CorruptTimeline> {
    if event.seq <= last {
        return Err(CorruptTimeline::Duplicate { seq: event.seq });
    }
    if event.seq != last + 1 {
        return Err(CorruptTimeline::Gap {
            expected: last + 1,
            found: event.seq,
        });
    }
    Ok(())
}
