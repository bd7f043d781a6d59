use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::record::{ApplyError, FailureReason, Freshness, Mode, PendingInvocation, TaskRecord, TaskStatus};
use crate::model::{assemble_payload, ModelPayload, ModelTurn, PayloadError, ThinkingEffort};
use crate::protocol::{
    describe_violations, validate_tool_args, ApprovalVerdict, BootstrapMetadata, InvocationId, Manifest,
    PlanVerdict, TaskId, ToolArgs, ToolErrorKind, ToolOutcome, ToolPayload, TOOL_EDIT,
};
use crate::safety::{evaluate, PolicyConfig, Verdict};
use crate::state::{
    replay, replay_onto, CorruptTimeline, EventBody, EventLog, SessionSnapshot, StateError, TimelineEvent,
    TwoTierStore,
};
use crate::tools::normalize_path;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadBeforeEditMode {
    /// Record a warning and let the edit proceed.
    #[default]
    Warn,
    /// Refuse edits of unread or stale files.
    Enforce,
}

impl FromStr for ReadBeforeEditMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "warn" => Ok(Self::Warn),
            "enforce" => Ok(Self::Enforce),
            _ => Err(format!("unknown read_before_edit_mode `{s}`; expected warn or enforce")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaestroConfig {
    pub max_iterations: u32,
    pub read_before_edit_mode: ReadBeforeEditMode,
}

impl Default for MaestroConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            read_before_edit_mode: ReadBeforeEditMode::Warn,
        }
    }
}

/// Shared services a task engine writes through.
#[derive(Clone)]
pub struct EngineDeps {
    pub log: Arc<dyn EventLog>,
    pub store: Arc<TwoTierStore>,
    pub policy: Arc<PolicyConfig>,
    pub manifest: Arc<Manifest>,
    pub config: MaestroConfig,
}

impl EngineDeps {
    /// In-memory log and store, empty policy, built-in manifest.
    pub fn in_memory() -> Self {
        Self {
            log: Arc::new(crate::state::MemoryEventLog::new()),
            store: Arc::new(TwoTierStore::in_memory()),
            policy: Arc::new(PolicyConfig::default()),
            manifest: Arc::new(Manifest::builtin()),
            config: MaestroConfig::default(),
        }
    }
}

impl fmt::Debug for EngineDeps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EngineDeps").field("config", &self.config).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchOrder {
    pub invocation_id: InvocationId,
    pub tool: String,
    pub args: ToolArgs,
    pub expected_hash: Option<String>,
    pub redispatch: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalOrder {
    pub invocation_id: InvocationId,
    pub tool: String,
    pub args: ToolArgs,
    pub matched_rules: Vec<String>,
}

/// What the loop must do next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Finalize(String),
    Dispatch(DispatchOrder),
    RequestApproval(ApprovalOrder),
    RequestPlanDecision(Vec<String>),
    FailTask(FailureReason),
    /// Ask the model again (a denial or rejection was fed back).
    Continue,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("unknown task {0}")]
    TaskNotFound(TaskId),
    #[error("{op} is not legal while the task is {status}")]
    InvalidState { op: &'static str, status: TaskStatus },
    #[error("unknown invocation {}", .got.as_ref().map_or("(none)", |i| i.as_str()))]
    UnknownInvocation { got: Option<InvocationId> },
    #[error("task is already {0}")]
    TaskTerminal(TaskStatus),
    #[error("a modified plan needs a non-empty step list")]
    ModifiedWithoutSteps,
    #[error(transparent)]
    Illegal(#[from] ApplyError),
    #[error(transparent)]
    Corrupt(#[from] CorruptTimeline),
    #[error(transparent)]
    Storage(#[from] StateError),
    #[error(transparent)]
    Payload(#[from] PayloadError),
}

/// Owns one task's record and is the only writer of its timeline.
pub struct TaskEngine {
    record: TaskRecord,
    deps: EngineDeps,
    fresh: Vec<TimelineEvent>,
}

impl fmt::Debug for TaskEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaskEngine").field("record", &self.record).finish_non_exhaustive()
    }
}

impl TaskEngine {
    pub fn create(
        deps: EngineDeps,
        task_id: TaskId,
        prompt: &str,
        mode: Mode,
        planning: bool,
        effort: ThinkingEffort,
    ) -> Result<Self, EngineError> {
        if prompt.trim().is_empty() {
            return Err(EngineError::EmptyPrompt);
        }
        let event = deps.log.append_event(
            &task_id,
            EventBody::TaskCreated {
                prompt: prompt.to_string(),
                mode,
                planning,
                effort,
            },
        )?;
        let record = TaskRecord::genesis(&event)?;
        let engine = Self {
            record,
            deps,
            fresh: vec![event],
        };
        engine.snapshot()?;
        Ok(engine)
    }

    /// Rebuilds a parked task from its snapshot plus any later events and
    /// appends `ClientReconnected`. Returns the question or dispatch to re-present.
    /// Loads a task's current state (snapshot plus tail, or full replay) without recording anything.
    pub fn restore(deps: EngineDeps, task_id: &TaskId) -> Result<Self, EngineError> {
        let record = match deps.store.get_session(task_id)? {
            Some(snapshot) => {
                let tail = deps.log.read_timeline(task_id, snapshot.record.last_seq + 1)?;
                replay_onto(snapshot.record, &tail)?
            }
            None => {
                let events = deps.log.read_timeline(task_id, 1)?;
                replay(&events)?.ok_or_else(|| EngineError::TaskNotFound(task_id.clone()))?
            }
        };
        Ok(Self {
            record,
            deps,
            fresh: Vec::new(),
        })
    }

    pub fn resume(deps: EngineDeps, task_id: &TaskId) -> Result<(Self, Directive), EngineError> {
        let snapshot = deps.store.get_session(task_id)?;
        let Some(snapshot) = snapshot else {
            let events = deps.log.read_timeline(task_id, 1)?;
            let record = replay(&events)?.ok_or_else(|| EngineError::TaskNotFound(task_id.clone()))?;
            if record.status.is_terminal() {
                return Err(EngineError::TaskTerminal(record.status));
            }
            let mut engine = Self {
                record,
                deps,
                fresh: Vec::new(),
            };
            let directive = engine.fail(FailureReason::Unrecoverable("session snapshot missing".into()))?;
            return Ok((engine, directive));
        };
        let tail = deps.log.read_timeline(task_id, snapshot.record.last_seq + 1)?;
        let mut record = replay_onto(snapshot.record, &tail)?;
        if record.status.is_terminal() {
            return Err(EngineError::TaskTerminal(record.status));
        }
        if record.status == TaskStatus::Bootstrapping {
            record.status = TaskStatus::Created;
        }
        let mut engine = Self {
            record,
            deps,
            fresh: Vec::new(),
        };
        let redispatch = match (&engine.record.status, &engine.record.pending_invocation) {
            (TaskStatus::AwaitingToolResult, Some(p)) => Some(p.invocation_id.clone()),
            _ => None,
        };
        engine.emit(EventBody::ClientReconnected { redispatch })?;
        let directive = match (engine.record.status, engine.record.pending_invocation.clone()) {
            (TaskStatus::AwaitingToolResult, Some(p)) => Directive::Dispatch(engine.dispatch_order(&p, true)),
            (TaskStatus::AwaitingApproval, Some(p)) => Directive::RequestApproval(approval_order(&p)),
            (TaskStatus::AwaitingPlanDecision, _) => Directive::RequestPlanDecision(
                engine.record.plan.as_ref().map(|p| p.steps.clone()).unwrap_or_default(),
            ),
            _ => Directive::Continue,
        };
        Ok((engine, directive))
    }

    pub fn record(&self) -> &TaskRecord {
        &self.record
    }

    pub fn task_id(&self) -> &TaskId {
        &self.record.task_id
    }

    pub fn status(&self) -> TaskStatus {
        self.record.status
    }

    pub fn deps(&self) -> &EngineDeps {
        &self.deps
    }

    /// Events appended since the last call.
    pub fn take_events(&mut self) -> Vec<TimelineEvent> {
        std::mem::take(&mut self.fresh)
    }

    pub fn payload(&self) -> Result<ModelPayload, EngineError> {
        let planning_requested = self.record.planning && self.record.accepted_plan().is_none();
        Ok(assemble_payload(
            &self.record,
            &self.deps.manifest,
            self.record.effort,
            planning_requested,
        )?)
    }

    fn snapshot(&self) -> Result<(), EngineError> {
        self.deps.store.put_session(&SessionSnapshot::of(&self.record))?;
        Ok(())
    }

    /// Validates the event against the fold, appends it, then applies it.
    fn emit(&mut self, body: EventBody) -> Result<(), EngineError> {
        let mut next = self.record.clone();
        let provisional = TimelineEvent {
            task_id: self.record.task_id.clone(),
            seq: self.record.last_seq + 1,
            timestamp: Utc::now(),
            body: body.clone(),
        };
        next.apply(&provisional)?;
        let event = self.deps.log.append_event(&self.record.task_id, body)?;
        if event.seq != provisional.seq {
            return Err(StateError::Corrupt(format!(
                "log assigned seq {} but the record expected {}",
                event.seq, provisional.seq
            ))
            .into());
        }
        let status_changed = next.status != self.record.status;
        self.record = next;
        self.fresh.push(event);
        if status_changed {
            self.snapshot()?;
        }
        Ok(())
    }

    fn require(&self, op: &'static str, status: TaskStatus) -> Result<(), EngineError> {
        if self.record.status.is_terminal() {
            return Err(EngineError::TaskTerminal(self.record.status));
        }
        if self.record.status != status {
            return Err(EngineError::InvalidState {
                op,
                status: self.record.status,
            });
        }
        Ok(())
    }

    /// Executor attached to a fresh task; a bootstrap request goes out next.
    pub fn begin_bootstrap(&mut self) -> Result<(), EngineError> {
        self.require("bootstrap", TaskStatus::Created)?;
        self.record.status = TaskStatus::Bootstrapping;
        self.snapshot()
    }

    pub fn complete_bootstrap(&mut self, metadata: BootstrapMetadata) -> Result<(), EngineError> {
        if self.record.status == TaskStatus::Created {
            self.record.status = TaskStatus::Bootstrapping;
        }
        self.require("bootstrap result", TaskStatus::Bootstrapping)?;
        self.emit(EventBody::BootstrapCompleted { metadata })
    }

    pub fn read_before_edit_check(&self, path: &str, current_hash: Option<&str>) -> Freshness {
        self.record.freshness(path, current_hash)
    }

    /// Applies one model turn.
    pub fn step(&mut self, turn: ModelTurn) -> Result<Directive, EngineError> {
        self.require("a model turn", TaskStatus::AwaitingModel)?;
        let max = self.deps.config.max_iterations;
        if self.record.iteration_count >= max {
            return self.fail(FailureReason::IterationLimit(max));
        }
        match turn {
            ModelTurn::FinalText { ref text } => {
                let text = text.clone();
                self.emit(EventBody::ModelResponse {
                    turn,
                    invocation_id: None,
                    rejection: None,
                })?;
                self.emit(EventBody::TaskCompleted {
                    final_text: text.clone(),
                })?;
                Ok(Directive::Finalize(text))
            }
            ModelTurn::PlanProposal { ref steps } => {
                let steps = steps.clone();
                let problem = if !self.record.planning {
                    Some("plan proposed in a task without planning mode")
                } else if self.record.accepted_plan().is_some() {
                    Some("plan proposed after a plan was already accepted")
                } else if steps.is_empty() {
                    Some("plan proposal has no steps")
                } else {
                    None
                };
                self.emit(EventBody::ModelResponse {
                    turn,
                    invocation_id: None,
                    rejection: None,
                })?;
                if let Some(problem) = problem {
                    return self.fail(FailureReason::InvalidTurnForState(problem.into()));
                }
                self.emit(EventBody::PlanProposed { steps: steps.clone() })?;
                Ok(Directive::RequestPlanDecision(steps))
            }
            ModelTurn::ToolCall { ref call } => {
                let call = call.clone();
                let id = self.record.next_invocation_id();
                if self.record.planning && self.record.accepted_plan().is_none() {
                    let why = "tool call before the plan was accepted";
                    self.emit(EventBody::ModelResponse {
                        turn,
                        invocation_id: Some(id),
                        rejection: Some(format!("{why}; propose a plan first")),
                    })?;
                    return self.fail(FailureReason::InvalidTurnForState(why.into()));
                }
                let rejection = match self.deps.manifest.get(&call.tool) {
                    None => Some(format!(
                        "unknown tool `{}`; available tools are {}",
                        call.tool,
                        self.deps.manifest.names().collect::<Vec<_>>().join(", ")
                    )),
                    Some(entry) => validate_tool_args(entry, &call.args)
                        .err()
                        .map(|v| describe_violations(entry, &v)),
                };
                let rejected = rejection.is_some();
                self.emit(EventBody::ModelResponse {
                    turn,
                    invocation_id: Some(id.clone()),
                    rejection,
                })?;
                if rejected {
                    return Ok(Directive::Continue);
                }

                let decision = evaluate(&self.deps.policy, &self.deps.manifest, &call, self.record.mode);
                if decision.verdict == Verdict::Deny {
                    self.emit(EventBody::PolicyDenied {
                        invocation_id: id,
                        message: decision.denial_message(),
                        matched_rules: decision.matched_rules,
                    })?;
                    return Ok(Directive::Continue);
                }

                if call.tool == TOOL_EDIT {
                    let path = call.str_arg("file_name").unwrap_or_default().to_string();
                    if self.read_before_edit_check(&path, None) == Freshness::Unread {
                        let rejected = self.deps.config.read_before_edit_mode == ReadBeforeEditMode::Enforce;
                        self.emit(EventBody::ReadBeforeEditWarning {
                            invocation_id: id.clone(),
                            path,
                            freshness: Freshness::Unread,
                            rejected,
                        })?;
                        if rejected {
                            return Ok(Directive::Continue);
                        }
                    }
                }

                if decision.verdict == Verdict::RequireApproval {
                    self.emit(EventBody::ApprovalRequested {
                        invocation_id: id,
                        matched_rules: decision.matched_rules,
                    })?;
                    let pending = self.record.pending_invocation.clone().expect("set by ApprovalRequested");
                    return Ok(Directive::RequestApproval(approval_order(&pending)));
                }
                self.dispatch(id, &call.tool, &call.args)
            }
        }
    }

    fn dispatch(&mut self, id: InvocationId, tool: &str, args: &ToolArgs) -> Result<Directive, EngineError> {
        self.emit(EventBody::ToolDispatched {
            invocation_id: id,
            tool: tool.to_string(),
            args: args.clone(),
        })?;
        let pending = self.record.pending_invocation.clone().expect("set by ToolDispatched");
        Ok(Directive::Dispatch(self.dispatch_order(&pending, false)))
    }

    fn dispatch_order(&self, pending: &PendingInvocation, redispatch: bool) -> DispatchOrder {
        let expected_hash = match (self.deps.config.read_before_edit_mode, pending.call.tool.as_str()) {
            (ReadBeforeEditMode::Enforce, TOOL_EDIT) => pending
                .call
                .str_arg("file_name")
                .and_then(|p| self.record.read_set.get(&normalize_path(p)).cloned()),
            _ => None,
        };
        DispatchOrder {
            invocation_id: pending.invocation_id.clone(),
            tool: pending.call.tool.clone(),
            args: pending.call.args.clone(),
            expected_hash,
            redispatch,
        }
    }

    /// Feeds an executor result back. A result that does not answer the
    /// in-flight invocation is recorded as a duplicate and otherwise ignored.
    pub fn handle_tool_result(&mut self, id: &InvocationId, outcome: ToolOutcome) -> Result<Directive, EngineError> {
        if self.record.status.is_terminal() {
            return Err(EngineError::TaskTerminal(self.record.status));
        }
        let pending = match (&self.record.status, &self.record.pending_invocation) {
            (TaskStatus::AwaitingToolResult, Some(p)) if &p.invocation_id == id => p.clone(),
            _ => {
                self.emit(EventBody::DuplicateResultIgnored { invocation_id: id.clone() })?;
                return Err(EngineError::UnknownInvocation { got: Some(id.clone()) });
            }
        };
        if pending.call.tool == TOOL_EDIT {
            let path = pending.call.str_arg("file_name").unwrap_or_default().to_string();
            let warning = match &outcome {
                ToolOutcome::Ok {
                    payload: ToolPayload::Edit { pre_hash, .. },
                } if self.read_before_edit_check(&path, Some(pre_hash)) == Freshness::Stale => Some(false),
                ToolOutcome::Error {
                    error_kind: ToolErrorKind::StaleRead,
                    ..
                } => Some(true),
                _ => None,
            };
            if let Some(rejected) = warning {
                self.emit(EventBody::ReadBeforeEditWarning {
                    invocation_id: id.clone(),
                    path,
                    freshness: Freshness::Stale,
                    rejected,
                })?;
            }
        }
        self.emit(EventBody::ToolResult {
            invocation_id: id.clone(),
            outcome,
        })?;
        Ok(Directive::Continue)
    }

    /// `id` may be omitted by callers that act on whatever is pending (HTTP actions).
    pub fn handle_approval(
        &mut self,
        id: Option<&InvocationId>,
        verdict: ApprovalVerdict,
        reason: Option<String>,
    ) -> Result<Directive, EngineError> {
        if self.record.status.is_terminal() {
            return Err(EngineError::TaskTerminal(self.record.status));
        }
        let pending = match (&self.record.status, &self.record.pending_invocation) {
            (TaskStatus::AwaitingApproval, Some(p)) if id.is_none_or(|i| i == &p.invocation_id) => p.clone(),
            (TaskStatus::AwaitingApproval, _) => {
                return Err(EngineError::UnknownInvocation { got: id.cloned() })
            }
            (status, _) => {
                return match id {
                    Some(i) => Err(EngineError::UnknownInvocation { got: Some(i.clone()) }),
                    None => Err(EngineError::InvalidState {
                        op: "an approval decision",
                        status: *status,
                    }),
                }
            }
        };
        let id = pending.invocation_id.clone();
        match verdict {
            ApprovalVerdict::Approve => {
                self.emit(EventBody::ApprovalGranted { invocation_id: id.clone() })?;
                self.dispatch(id, &pending.call.tool, &pending.call.args)
            }
            ApprovalVerdict::Deny => {
                self.emit(EventBody::ApprovalDenied { invocation_id: id, reason })?;
                Ok(Directive::Continue)
            }
        }
    }

    pub fn handle_plan_decision(
        &mut self,
        verdict: PlanVerdict,
        modified_steps: Option<Vec<String>>,
        reason: Option<String>,
    ) -> Result<Directive, EngineError> {
        self.require("a plan decision", TaskStatus::AwaitingPlanDecision)?;
        let proposed = self.record.plan.as_ref().map(|p| p.steps.clone()).unwrap_or_default();
        let body = match verdict {
            PlanVerdict::Approved => EventBody::PlanApproved { steps: proposed },
            PlanVerdict::Modified => {
                let steps: Vec<String> = modified_steps
                    .unwrap_or_default()
                    .into_iter()
                    .filter(|s| !s.trim().is_empty())
                    .collect();
                if steps.is_empty() {
                    return Err(EngineError::ModifiedWithoutSteps);
                }
                EventBody::PlanModified { steps }
            }
            PlanVerdict::Rejected => EventBody::PlanRejected { reason },
        };
        self.emit(body)?;
        Ok(Directive::Continue)
    }

    pub fn cancel(&mut self, reason: Option<String>) -> Result<(), EngineError> {
        if self.record.status.is_terminal() {
            return Err(EngineError::TaskTerminal(self.record.status));
        }
        self.emit(EventBody::TaskCancelled { reason })
    }

    pub fn fail(&mut self, reason: FailureReason) -> Result<Directive, EngineError> {
        if self.record.status.is_terminal() {
            return Err(EngineError::TaskTerminal(self.record.status));
        }
        self.emit(EventBody::TaskFailed { reason: reason.clone() })?;
        Ok(Directive::FailTask(reason))
    }

    /// Executor gone: record it and persist a snapshot. The task stays resumable.
    pub fn disconnect(&mut self, reason: &str) -> Result<(), EngineError> {
        if self.record.status.is_terminal() {
            return Ok(());
        }
        self.emit(EventBody::ClientDisconnected {
            reason: reason.to_string(),
        })?;
        self.snapshot()
    }
}

fn approval_order(p: &PendingInvocation) -> ApprovalOrder {
    ApprovalOrder {
        invocation_id: p.invocation_id.clone(),
        tool: p.call.tool.clone(),
        args: p.call.args.clone(),
        matched_rules: p.audit.clone(),
    }
}
