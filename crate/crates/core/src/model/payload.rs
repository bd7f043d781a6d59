use serde::{Deserialize, Serialize};

use super::turn::{ThinkingEffort, Turn};
use crate::maestro::TaskRecord;
use crate::protocol::{BootstrapMetadata, Manifest};

/// Fixed instructions sent with every payload.
pub const SYSTEM_PROMPT: &str = include_str!("../../assets/system_prompt.txt");

/// Appended to the system prompt while a planning task has no accepted plan.
pub const PLAN_PROMPT: &str = include_str!("../../assets/plan_prompt.txt");

/// The read-before-edit rule as it appears in [`SYSTEM_PROMPT`].
pub const READ_BEFORE_EDIT_RULE: &str = "Always invoke the read tool on a file before calling edit on it";

/// Everything a driver sees for one model call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPayload {
    pub system_prompt: String,
    pub history: Vec<Turn>,
    pub bootstrap: BootstrapMetadata,
    pub manifest: Manifest,
    pub effort: ThinkingEffort,
    pub planning_requested: bool,
}

impl ModelPayload {
    pub fn last_entry(&self) -> Option<&Turn> {
        self.history.last()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("task {0} has not completed bootstrap")]
    BootstrapMissing(String),
}

pub fn assemble_payload(
    task: &TaskRecord,
    manifest: &Manifest,
    effort: ThinkingEffort,
    planning_requested: bool,
) -> Result<ModelPayload, PayloadError> {
    let bootstrap = task
        .bootstrap
        .clone()
        .ok_or_else(|| PayloadError::BootstrapMissing(task.task_id.to_string()))?;
    let mut system_prompt = SYSTEM_PROMPT.to_string();
    if planning_requested {
        system_prompt.push('\n');
        system_prompt.push_str(PLAN_PROMPT);
    }
    Ok(ModelPayload {
        system_prompt,
        history: task.history.clone(),
        bootstrap,
        manifest: manifest.clone(),
        effort,
        planning_requested,
    })
}
