use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::maestro::{FailureReason, Freshness, Mode};
use crate::model::{ModelTurn, ThinkingEffort};
use crate::protocol::{BootstrapMetadata, InvocationId, TaskId, ToolArgs, ToolOutcome};
use crate::safety::MatchedRule;

/// One append-only audit record of a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub task_id: TaskId,
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl TimelineEvent {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    TaskCreated {
        prompt: String,
        mode: Mode,
        planning: bool,
        effort: ThinkingEffort,
    },
    BootstrapCompleted {
        metadata: BootstrapMetadata,
    },
    ModelResponse {
        turn: ModelTurn,
        /// Issued for tool-call turns.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        invocation_id: Option<InvocationId>,
        /// Why the call was refused before policy evaluation (bad arguments, unknown tool).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rejection: Option<String>,
    },
    PlanProposed {
        steps: Vec<String>,
    },
    PlanApproved {
        steps: Vec<String>,
    },
    PlanModified {
        steps: Vec<String>,
    },
    PlanRejected {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    ApprovalRequested {
        invocation_id: InvocationId,
        matched_rules: Vec<MatchedRule>,
    },
    ApprovalGranted {
        invocation_id: InvocationId,
    },
    ApprovalDenied {
        invocation_id: InvocationId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    PolicyDenied {
        invocation_id: InvocationId,
        matched_rules: Vec<MatchedRule>,
        message: String,
    },
    ToolDispatched {
        invocation_id: InvocationId,
        tool: String,
        args: ToolArgs,
    },
    ToolResult {
        invocation_id: InvocationId,
        outcome: ToolOutcome,
    },
    ReadBeforeEditWarning {
        invocation_id: InvocationId,
        path: String,
        freshness: Freshness,
        /// True when hard enforcement refused the edit.
        rejected: bool,
    },
    DuplicateResultIgnored {
        invocation_id: InvocationId,
    },
    ClientDisconnected {
        reason: String,
    },
    ClientReconnected {
        /// The invocation re-sent to the new executor, if any.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        redispatch: Option<InvocationId>,
    },
    TaskCompleted {
        final_text: String,
    },
    TaskFailed {
        reason: FailureReason,
    },
    TaskCancelled {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    TaskCreated,
    BootstrapCompleted,
    ModelResponse,
    PlanProposed,
    PlanApproved,
    PlanModified,
    PlanRejected,
    ApprovalRequested,
    ApprovalGranted,
    ApprovalDenied,
    PolicyDenied,
    ToolDispatched,
    ToolResult,
    ReadBeforeEditWarning,
    DuplicateResultIgnored,
    ClientDisconnected,
    ClientReconnected,
    TaskCompleted,
    TaskFailed,
    TaskCancelled,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::TaskCompleted | EventKind::TaskFailed | EventKind::TaskCancelled)
    }

    /// Connection bookkeeping that an uninterrupted run would not have.
    pub fn is_connection(self) -> bool {
        matches!(self, EventKind::ClientDisconnected | EventKind::ClientReconnected)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::TaskCreated { .. } => EventKind::TaskCreated,
            EventBody::BootstrapCompleted { .. } => EventKind::BootstrapCompleted,
            EventBody::ModelResponse { .. } => EventKind::ModelResponse,
            EventBody::PlanProposed { .. } => EventKind::PlanProposed,
            EventBody::PlanApproved { .. } => EventKind::PlanApproved,
            EventBody::PlanModified { .. } => EventKind::PlanModified,
            EventBody::PlanRejected { .. } => EventKind::PlanRejected,
            EventBody::ApprovalRequested { .. } => EventKind::ApprovalRequested,
            EventBody::ApprovalGranted { .. } => EventKind::ApprovalGranted,
            EventBody::ApprovalDenied { .. } => EventKind::ApprovalDenied,
            EventBody::PolicyDenied { .. } => EventKind::PolicyDenied,
            EventBody::ToolDispatched { .. } => EventKind::ToolDispatched,
            EventBody::ToolResult { .. } => EventKind::ToolResult,
            EventBody::ReadBeforeEditWarning { .. } => EventKind::ReadBeforeEditWarning,
            EventBody::DuplicateResultIgnored { .. } => EventKind::DuplicateResultIgnored,
            EventBody::ClientDisconnected { .. } => EventKind::ClientDisconnected,
            EventBody::ClientReconnected { .. } => EventKind::ClientReconnected,
            EventBody::TaskCompleted { .. } => EventKind::TaskCompleted,
            EventBody::TaskFailed { .. } => EventKind::TaskFailed,
            EventBody::TaskCancelled { .. } => EventKind::TaskCancelled,
        }
    }

    /// One-line human summary, used by `logs`.
    pub fn summary(&self) -> String {
        match self {
            EventBody::TaskCreated { prompt, mode, planning, effort } => {
                format!("prompt={prompt:?} mode={mode} planning={planning} effort={effort}")
            }
            EventBody::BootstrapCompleted { metadata } => format!(
                "os={} cwd={} commits={} entries={}",
                metadata.os_name,
                metadata.working_directory,
                metadata.recent_git_history.len(),
                metadata.project_structure.len()
            ),
            EventBody::ModelResponse { turn, invocation_id, rejection } => {
                let mut s = turn.render();
                if let Some(id) = invocation_id {
                    s = format!("[{id}] {s}");
                }
                if let Some(r) = rejection {
                    s.push_str(&format!(" (rejected: {r})"));
                }
                s
            }
            EventBody::PlanProposed { steps } | EventBody::PlanApproved { steps } | EventBody::PlanModified { steps } => {
                steps.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join(" | ")
            }
            EventBody::PlanRejected { reason } | EventBody::TaskCancelled { reason } => {
                reason.clone().unwrap_or_default()
            }
            EventBody::ApprovalRequested { invocation_id, matched_rules } => {
                let rules: Vec<String> = matched_rules.iter().map(ToString::to_string).collect();
                format!("[{invocation_id}] {}", rules.join("; "))
            }
            EventBody::ApprovalGranted { invocation_id } | EventBody::DuplicateResultIgnored { invocation_id } => {
                format!("[{invocation_id}]")
            }
            EventBody::ApprovalDenied { invocation_id, reason } => {
                format!("[{invocation_id}] {}", reason.as_deref().unwrap_or(""))
            }
            EventBody::PolicyDenied { invocation_id, message, .. } => format!("[{invocation_id}] {message}"),
            EventBody::ToolDispatched { invocation_id, tool, args } => {
                format!("[{invocation_id}] {tool} {}", serde_json::to_string(args).unwrap_or_default())
            }
            EventBody::ToolResult { invocation_id, outcome } => {
                let status = match outcome.error_kind() {
                    None => "ok".to_string(),
                    Some(k) => format!("error {k:?}"),
                };
                format!("[{invocation_id}] {status}")
            }
            EventBody::ReadBeforeEditWarning { invocation_id, path, freshness, rejected } => {
                let action = if *rejected { "rejected" } else { "proceeding" };
                format!("[{invocation_id}] {path} is {freshness}, {action}")
            }
            EventBody::ClientDisconnected { reason } => reason.clone(),
            EventBody::ClientReconnected { redispatch } => match redispatch {
                Some(id) => format!("redispatch {id}"),
                None => String::new(),
            },
            EventBody::TaskCompleted { final_text } => final_text.clone(),
            EventBody::TaskFailed { reason } => reason.to_string(),
        }
    }
}
