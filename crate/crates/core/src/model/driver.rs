use std::sync::{Arc, Mutex};

use async_trait::async_trait;

use super::payload::ModelPayload;
use super::script::Script;
use super::turn::ModelTurn;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DriverError {
    #[error("driver unavailable: {0}")]
    Unavailable(String),
    #[error("malformed model turn: {0}")]
    MalformedTurn(String),
}

/// Produces the model's next move from an assembled payload.
///
/// One call is in flight per task at a time; each task gets its own driver
/// instance from a [`DriverFactory`].
#[async_trait]
pub trait ModelDriver: Send {
    async fn next_turn(&mut self, payload: &ModelPayload) -> Result<ModelTurn, DriverError>;

    /// Called once after a restart with the number of turns the task already recorded.
    fn resume_after(&mut self, _turns_recorded: usize) {}
}

/// Builds a driver for a newly created task.
pub trait DriverFactory: Send + Sync {
    fn create(&self, prompt: &str) -> Box<dyn ModelDriver>;
}

impl<F> DriverFactory for F
where
    F: Fn(&str) -> Box<dyn ModelDriver> + Send + Sync,
{
    fn create(&self, prompt: &str) -> Box<dyn ModelDriver> {
        self(prompt)
    }
}

/// Plays back a [`Script`], one entry per call.
#[derive(Debug, Clone)]
pub struct ScriptedDriver {
    script: Script,
    cursor: usize,
    recorder: Option<Arc<Mutex<Vec<ModelPayload>>>>,
}

impl ScriptedDriver {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            cursor: 0,
            recorder: None,
        }
    }

    /// Keeps a copy of every payload this driver receives.
    pub fn with_recorder(mut self, recorder: Arc<Mutex<Vec<ModelPayload>>>) -> Self {
        self.recorder = Some(recorder);
        self
    }

    /// Skips entries already consumed before a restart.
    pub fn fast_forward(&mut self, consumed: usize) {
        self.cursor = consumed.min(self.script.len());
    }

    pub fn remaining(&self) -> usize {
        self.script.len() - self.cursor
    }
}

#[async_trait]
impl ModelDriver for ScriptedDriver {
    async fn next_turn(&mut self, payload: &ModelPayload) -> Result<ModelTurn, DriverError> {
        if let Some(rec) = &self.recorder {
            rec.lock().expect("recorder poisoned").push(payload.clone());
        }
        let entry = self
            .script
            .entries
            .get(self.cursor)
            .ok_or_else(|| DriverError::Unavailable("script exhausted".into()))?;
        self.cursor += 1;
        if let Some(pattern) = &entry.pattern {
            let last = payload.last_entry().map(|t| t.content.as_str()).unwrap_or("");
            if !last.contains(pattern.as_str()) {
                return Err(DriverError::MalformedTurn(format!(
                    "script line {} expects the last history entry to contain `{pattern}`, got `{}`",
                    entry.line,
                    truncate(last, 200)
                )));
            }
        }
        if payload.planning_requested && matches!(entry.respond, ModelTurn::ToolCall { .. }) {
            return Err(DriverError::MalformedTurn(format!(
                "script line {} calls a tool before a plan was accepted",
                entry.line
            )));
        }
        Ok(entry.respond.clone())
    }

    fn resume_after(&mut self, turns_recorded: usize) {
        self.fast_forward(turns_recorded);
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
