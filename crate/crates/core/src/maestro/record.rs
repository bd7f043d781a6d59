use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{ModelTurn, ThinkingEffort, Turn};
use crate::protocol::{BootstrapMetadata, InvocationId, TaskId, ToolCall, ToolPayload};
use crate::state::{EventBody, EventKind, TimelineEvent};
use crate::tools::normalize_path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Approval,
    Autonomous,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Approval, Mode::Autonomous];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Approval => "approval",
            Mode::Autonomous => "autonomous",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}`; legal modes are approval, autonomous"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskStatus {
    Created,
    Bootstrapping,
    AwaitingModel,
    AwaitingApproval,
    AwaitingToolResult,
    AwaitingPlanDecision,
    Completed,
    Failed,
    Cancelled,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Completed | TaskStatus::Failed | TaskStatus::Cancelled)
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", content = "detail")]
pub enum FailureReason {
    IterationLimit(u32),
    DriverUnavailable(String),
    InvalidTurnForState(String),
    Unrecoverable(String),
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureReason::IterationLimit(n) => write!(f, "IterationLimit: exceeded {n} model turns"),
            FailureReason::DriverUnavailable(d) => write!(f, "DriverUnavailable: {d}"),
            FailureReason::InvalidTurnForState(d) => write!(f, "InvalidTurnForState: {d}"),
            FailureReason::Unrecoverable(d) => write!(f, "Unrecoverable: {d}"),
        }
    }
}

/// Read-set state of a path at edit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freshness {
    Fresh,
    Stale,
    Unread,
}

impl fmt::Display for Freshness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Freshness::Fresh => "fresh",
            Freshness::Stale => "stale",
            Freshness::Unread => "unread",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanDecisionState {
    Pending,
    Approved,
    Rejected,
    Modified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<String>,
    pub decision: PlanDecisionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modified_steps: Option<Vec<String>>,
}

impl Plan {
    /// The steps execution follows once accepted.
    pub fn effective_steps(&self) -> &[String] {
        self.modified_steps.as_deref().unwrap_or(&self.steps)
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self.decision, PlanDecisionState::Approved | PlanDecisionState::Modified)
    }
}

/// The tool call the task is waiting on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingInvocation {
    pub invocation_id: InvocationId,
    pub call: ToolCall,
    #[serde(default)]
    pub approved: bool,
    #[serde(default)]
    pub audit: Vec<String>,
}

/// Refusal to fold an event into a record.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event {seq} ({kind}) is illegal in status {status}: {detail}")]
pub struct ApplyError {
    pub seq: u64,
    pub kind: EventKind,
    pub status: TaskStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub status: TaskStatus,
    pub mode: Mode,
    pub planning: bool,
    pub effort: ThinkingEffort,
    pub prompt: String,
    pub history: Vec<Turn>,
    /// path → digest of the content last returned by `read`.
    pub read_set: BTreeMap<String, String>,
    pub pending_invocation: Option<PendingInvocation>,
    /// A tool call the model just made that has not been dispatched, denied or queued yet.
    pub proposed: Option<PendingInvocation>,
    pub plan: Option<Plan>,
    pub iteration_count: u32,
    pub invocations_issued: u64,
    pub final_text: Option<String>,
    pub failure: Option<FailureReason>,
    pub bootstrap: Option<BootstrapMetadata>,
    pub last_seq: u64,
}

pub fn plan_text(steps: &[String]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn approval_denied_text(reason: Option<&str>) -> String {
    match reason {
        Some(r) if !r.is_empty() => format!("denied by the user: {r}. Choose a different approach."),
        _ => "denied by the user. Choose a different approach.".to_string(),
    }
}

pub fn plan_rejected_text(reason: Option<&str>) -> String {
    match reason {
        Some(r) if !r.is_empty() => format!("plan rejected: {r}"),
        _ => "plan rejected".to_string(),
    }
}

impl TaskRecord {
    /// The record created by a timeline's first event.
    pub fn genesis(event: &TimelineEvent) -> Result<Self, ApplyError> {
        match &event.body {
            EventBody::TaskCreated {
                prompt,
                mode,
                planning,
                effort,
            } if event.seq == 1 => Ok(Self {
                task_id: event.task_id.clone(),
                status: TaskStatus::Created,
                mode: *mode,
                planning: *planning,
                effort: *effort,
                prompt: prompt.clone(),
                history: vec![Turn::user(prompt.clone())],
                read_set: BTreeMap::new(),
                pending_invocation: None,
                proposed: None,
                plan: None,
                iteration_count: 0,
                invocations_issued: 0,
                final_text: None,
                failure: None,
                bootstrap: None,
                last_seq: 1,
            }),
            _ => Err(ApplyError {
                seq: event.seq,
                kind: event.kind(),
                status: TaskStatus::Created,
                detail: "a timeline must start with TaskCreated at seq 1".into(),
            }),
        }
    }

    pub fn accepted_plan(&self) -> Option<&[String]> {
        self.plan.as_ref().filter(|p| p.is_accepted()).map(|p| p.effective_steps())
    }

    /// Id the next tool-call turn will get.
    pub fn next_invocation_id(&self) -> InvocationId {
        InvocationId::nth(self.invocations_issued + 1)
    }

    pub fn freshness(&self, path: &str, current_hash: Option<&str>) -> Freshness {
        match (self.read_set.get(&normalize_path(path)), current_hash) {
            (None, _) => Freshness::Unread,
            (Some(h), Some(cur)) if h != cur => Freshness::Stale,
            _ => Freshness::Fresh,
        }
    }

    /// Folds one event into the record. Live handlers and replay both go
    /// through here, so a replayed timeline reproduces the live record.
    pub fn apply(&mut self, event: &TimelineEvent) -> Result<(), ApplyError> {
        let status = self.status;
        let fail = |detail: String| ApplyError {
            seq: event.seq,
            kind: event.kind(),
            status,
            detail,
        };
        if status.is_terminal() {
            return Err(fail("task is terminal".into()));
        }
        let expect = |ok: bool, what: &str| if ok { Ok(()) } else { Err(fail(what.to_string())) };

        match &event.body {
            EventBody::TaskCreated { .. } => return Err(fail("task already exists".into())),
            EventBody::BootstrapCompleted { metadata } => {
                expect(
                    matches!(status, TaskStatus::Created | TaskStatus::Bootstrapping),
                    "bootstrap already completed",
                )?;
                self.bootstrap = Some(metadata.clone());
                self.status = TaskStatus::AwaitingModel;
            }
            EventBody::ModelResponse {
                turn,
                invocation_id,
                rejection,
            } => {
                expect(status == TaskStatus::AwaitingModel, "not awaiting the model")?;
                expect(self.proposed.is_none(), "previous tool call unresolved")?;
                self.iteration_count += 1;
                self.history.push(Turn::model(turn.render(), invocation_id.clone()));
                match (turn, invocation_id) {
                    (ModelTurn::ToolCall { call }, Some(id)) => {
                        expect(*id == self.next_invocation_id(), "invocation ids must be issued in order")?;
                        self.invocations_issued += 1;
                        match rejection {
                            Some(text) => self.history.push(Turn::tool_error(text.clone(), id.clone())),
                            None => {
                                self.proposed = Some(PendingInvocation {
                                    invocation_id: id.clone(),
                                    call: call.clone(),
                                    approved: false,
                                    audit: Vec::new(),
                                })
                            }
                        }
                    }
                    (ModelTurn::ToolCall { .. }, None) => return Err(fail("tool call without invocation id".into())),
                    (_, Some(_)) => return Err(fail("invocation id on a non-tool turn".into())),
                    (_, None) => expect(rejection.is_none(), "rejection on a non-tool turn")?,
                }
            }
            EventBody::PlanProposed { steps } => {
                expect(status == TaskStatus::AwaitingModel, "not awaiting the model")?;
                expect(self.planning && self.accepted_plan().is_none(), "plan proposal not expected")?;
                expect(!steps.is_empty(), "empty plan")?;
                self.plan = Some(Plan {
                    steps: steps.clone(),
                    decision: PlanDecisionState::Pending,
                    modified_steps: None,
                });
                self.status = TaskStatus::AwaitingPlanDecision;
            }
            EventBody::PlanApproved { steps } | EventBody::PlanModified { steps } => {
                expect(status == TaskStatus::AwaitingPlanDecision, "no plan awaiting a decision")?;
                expect(!steps.is_empty(), "empty plan")?;
                let plan = self.plan.as_mut().ok_or_else(|| fail("no plan proposed".into()))?;
                let modified = event.kind() == EventKind::PlanModified;
                if modified {
                    plan.decision = PlanDecisionState::Modified;
                    plan.modified_steps = Some(steps.clone());
                } else {
                    plan.decision = PlanDecisionState::Approved;
                }
                let header = if modified {
                    "Plan modified by the user. Execute these steps:"
                } else {
                    "Plan approved. Execute these steps:"
                };
                self.history.push(Turn::user(format!("{header}\n{}", plan_text(steps))));
                self.status = TaskStatus::AwaitingModel;
            }
            EventBody::PlanRejected { reason } => {
                expect(status == TaskStatus::AwaitingPlanDecision, "no plan awaiting a decision")?;
                if let Some(plan) = self.plan.as_mut() {
                    plan.decision = PlanDecisionState::Rejected;
                }
                self.history.push(Turn::user(plan_rejected_text(reason.as_deref())));
                self.status = TaskStatus::AwaitingModel;
            }
            EventBody::ApprovalRequested {
                invocation_id,
                matched_rules,
            } => {
                expect(status == TaskStatus::AwaitingModel, "not awaiting the model")?;
                let mut pending = self.take_proposed(invocation_id).map_err(fail)?;
                pending.audit = matched_rules.iter().map(ToString::to_string).collect();
                self.pending_invocation = Some(pending);
                self.status = TaskStatus::AwaitingApproval;
            }
            EventBody::ApprovalGranted { invocation_id } => {
                expect(status == TaskStatus::AwaitingApproval, "nothing awaiting approval")?;
                let pending = self.pending_invocation.as_mut().ok_or_else(|| fail("no pending invocation".into()))?;
                expect(&pending.invocation_id == invocation_id, "approval for another invocation")?;
                expect(!pending.approved, "already approved")?;
                pending.approved = true;
            }
            EventBody::ApprovalDenied { invocation_id, reason } => {
                expect(status == TaskStatus::AwaitingApproval, "nothing awaiting approval")?;
                let pending = self.pending_invocation.as_ref().ok_or_else(|| fail("no pending invocation".into()))?;
                expect(&pending.invocation_id == invocation_id, "denial for another invocation")?;
                expect(!pending.approved, "already approved")?;
                self.pending_invocation = None;
                self.history
                    .push(Turn::tool_error(approval_denied_text(reason.as_deref()), invocation_id.clone()));
                self.status = TaskStatus::AwaitingModel;
            }
            EventBody::PolicyDenied {
                invocation_id, message, ..
            } => {
                expect(status == TaskStatus::AwaitingModel, "not awaiting the model")?;
                self.take_proposed(invocation_id).map_err(fail)?;
                self.history.push(Turn::tool_error(message.clone(), invocation_id.clone()));
            }
            EventBody::ToolDispatched {
                invocation_id,
                tool,
                args,
            } => {
                let pending = match status {
                    TaskStatus::AwaitingModel => self.take_proposed(invocation_id).map_err(fail)?,
                    TaskStatus::AwaitingApproval => {
                        let p = self.pending_invocation.take().ok_or_else(|| fail("no pending invocation".into()))?;
                        if &p.invocation_id != invocation_id || !p.approved {
                            self.pending_invocation = Some(p);
                            return Err(fail("dispatch of an unapproved invocation".into()));
                        }
                        p
                    }
                    _ => return Err(fail("nothing to dispatch".into())),
                };
                if &pending.call.tool != tool || &pending.call.args != args {
                    return Err(fail("dispatched call differs from the model's call".into()));
                }
                self.pending_invocation = Some(pending);
                self.status = TaskStatus::AwaitingToolResult;
            }
            EventBody::ToolResult { invocation_id, outcome } => {
                expect(status == TaskStatus::AwaitingToolResult, "no tool result expected")?;
                let pending = self.pending_invocation.as_ref().ok_or_else(|| fail("no pending invocation".into()))?;
                expect(&pending.invocation_id == invocation_id, "result for another invocation")?;
                if let Some(ToolPayload::Read { path, hash, .. }) = outcome.payload().filter(|_| outcome.is_ok()) {
                    self.read_set.insert(normalize_path(path), hash.clone());
                }
                let text = outcome.render_for_model();
                self.history.push(if outcome.is_ok() {
                    Turn::tool(text, invocation_id.clone())
                } else {
                    Turn::tool_error(text, invocation_id.clone())
                });
                self.pending_invocation = None;
                self.status = TaskStatus::AwaitingModel;
            }
            EventBody::ReadBeforeEditWarning {
                invocation_id,
                path,
                freshness,
                rejected,
            } => {
                // before dispatch a rejection answers the model's call; afterwards the
                // executor's error result does that
                if *rejected && status == TaskStatus::AwaitingModel {
                    self.take_proposed(invocation_id).map_err(fail)?;
                    self.history.push(Turn::tool_error(
                        format!(
                            "edit rejected: {path} is {freshness}. Read the file with read(path) first, then retry the edit against its current content."
                        ),
                        invocation_id.clone(),
                    ));
                }
            }
            EventBody::DuplicateResultIgnored { .. } => {}
            EventBody::ClientDisconnected { .. } => {
                if status == TaskStatus::Bootstrapping {
                    self.status = TaskStatus::Created;
                }
            }
            EventBody::ClientReconnected { redispatch } => {
                if let Some(id) = redispatch {
                    let matches = status == TaskStatus::AwaitingToolResult
                        && self.pending_invocation.as_ref().is_some_and(|p| &p.invocation_id == id);
                    expect(matches, "redispatch of an invocation that is not in flight")?;
                }
            }
            EventBody::TaskCompleted { final_text } => {
                expect(status == TaskStatus::AwaitingModel, "not awaiting the model")?;
                self.final_text = Some(final_text.clone());
                self.finish(TaskStatus::Completed);
            }
            EventBody::TaskFailed { reason } => {
                self.failure = Some(reason.clone());
                self.finish(TaskStatus::Failed);
            }
            EventBody::TaskCancelled { .. } => self.finish(TaskStatus::Cancelled),
        }
        self.last_seq = event.seq;
        Ok(())
    }

    fn take_proposed(&mut self, id: &InvocationId) -> Result<PendingInvocation, String> {
        match self.proposed.take() {
            Some(p) if &p.invocation_id == id => Ok(p),
            other => {
                self.proposed = other;
                Err(format!("{id} is not the model's latest call"))
            }
        }
    }

    fn finish(&mut self, status: TaskStatus) {
        self.pending_invocation = None;
        self.proposed = None;
        self.status = status;
    }
}
