#![allow(dead_code)]

pub mod checks;
pub mod gen;

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use tiller_core::maestro::{
    run_loop, ChannelClosed, EngineDeps, ExecutorChannel, Inbound, LoopExit, MaestroConfig, Mode, Outbound,
    TaskEngine,
};
use tiller_core::model::{parse_script, ModelPayload, Script, ScriptedDriver, ThinkingEffort};
use tiller_core::protocol::{ApprovalVerdict, InvocationId, PlanVerdict, TaskId, ToolOutcome};
use tiller_core::safety::PolicyConfig;
use tiller_core::state::{EventKind, TimelineEvent};
use tiller_core::tools::Workspace;

/// Approval/plan answers given by the simulated human, in order.
#[derive(Debug, Clone)]
pub enum Answer {
    Approve,
    Deny(&'static str),
    PlanApprove,
    PlanReject,
    PlanModify(Vec<String>),
}

/// When the simulated executor dies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kill {
    /// After the n-th Update with this kind has been delivered.
    AfterEvent(EventKind, usize),
    /// After executing the n-th dispatch but before returning its result.
    AfterExecuting(usize),
}

/// Executor state that outlives one connection: the completed-invocation cache and a run log.
#[derive(Default)]
pub struct ExecutorState {
    pub completed: HashMap<InvocationId, ToolOutcome>,
    pub executions: Vec<InvocationId>,
    /// Approval answers; approve when empty.
    pub approvals: VecDeque<Answer>,
    /// Plan answers; approve when empty.
    pub plans: VecDeque<Answer>,
    pub seen: Vec<TimelineEvent>,
}

/// An in-process executor speaking the loop's channel interface.
pub struct SimExecutor<'a> {
    pub workspace: &'a Workspace,
    pub state: &'a mut ExecutorState,
    pub kill: Option<Kill>,
    dead: bool,
    inbox: VecDeque<Inbound>,
    dispatches: usize,
    event_counts: HashMap<EventKind, usize>,
}

impl<'a> SimExecutor<'a> {
    pub fn new(workspace: &'a Workspace, state: &'a mut ExecutorState, kill: Option<Kill>) -> Self {
        Self {
            workspace,
            state,
            kill,
            dead: false,
            inbox: VecDeque::new(),
            dispatches: 0,
            event_counts: HashMap::new(),
        }
    }
}

#[async_trait]
impl ExecutorChannel for SimExecutor<'_> {
    async fn send(&mut self, msg: Outbound) -> Result<(), ChannelClosed> {
        if self.dead {
            return Err(ChannelClosed);
        }
        match msg {
            Outbound::BootstrapRequest => {
                let meta = self.workspace.bootstrap().await;
                self.inbox.push_back(Inbound::Bootstrap(meta));
            }
            Outbound::Dispatch(order) => {
                self.dispatches += 1;
                let outcome = match self.state.completed.get(&order.invocation_id) {
                    Some(cached) => cached.clone(),
                    None => {
                        let out = self
                            .workspace
                            .execute(&order.tool, &order.args, order.expected_hash.as_deref())
                            .await;
                        self.state.executions.push(order.invocation_id.clone());
                        self.state.completed.insert(order.invocation_id.clone(), out.clone());
                        out
                    }
                };
                if self.kill == Some(Kill::AfterExecuting(self.dispatches)) {
                    self.dead = true;
                    return Ok(());
                }
                self.inbox.push_back(Inbound::ToolResult {
                    invocation_id: order.invocation_id,
                    outcome,
                });
            }
            Outbound::ApprovalRequest(order) => {
                let (decision, reason) = match self.state.approvals.pop_front() {
                    None | Some(Answer::Approve) => (ApprovalVerdict::Approve, None),
                    Some(Answer::Deny(r)) => (ApprovalVerdict::Deny, Some(r.to_string())),
                    other => panic!("approval requested but next answer is {other:?}"),
                };
                self.inbox.push_back(Inbound::Approval {
                    invocation_id: Some(order.invocation_id),
                    decision,
                    reason,
                    reply: None,
                });
            }
            Outbound::PlanProposed(_) => {
                let (decision, steps) = match self.state.plans.pop_front() {
                    None | Some(Answer::PlanApprove) => (PlanVerdict::Approved, None),
                    Some(Answer::PlanReject) => (PlanVerdict::Rejected, None),
                    Some(Answer::PlanModify(s)) => (PlanVerdict::Modified, Some(s)),
                    other => panic!("plan proposed but next answer is {other:?}"),
                };
                self.inbox.push_back(Inbound::PlanDecision {
                    decision,
                    modified_steps: steps,
                    reason: None,
                    reply: None,
                });
            }
            Outbound::Update(event) => {
                let kind = event.kind();
                self.state.seen.push(event);
                let n = self.event_counts.entry(kind).or_default();
                *n += 1;
                if self.kill == Some(Kill::AfterEvent(kind, *n)) {
                    self.dead = true;
                }
            }
        }
        Ok(())
    }

    async fn recv(&mut self) -> Inbound {
        if self.dead {
            return Inbound::Disconnected {
                reason: "executor killed".into(),
            };
        }
        self.inbox.pop_front().unwrap_or_else(|| Inbound::Disconnected {
            reason: "executor has nothing to say".into(),
        })
    }

    fn try_recv(&mut self) -> Option<Inbound> {
        if self.dead {
            return Some(Inbound::Disconnected {
                reason: "executor killed".into(),
            });
        }
        self.inbox.pop_front()
    }
}

pub struct Session {
    pub deps: EngineDeps,
    pub task_id: TaskId,
    pub workspace: Workspace,
    pub driver: ScriptedDriver,
    pub payloads: Arc<Mutex<Vec<ModelPayload>>>,
    pub executor: ExecutorState,
}

pub fn deps_with(policy: PolicyConfig, config: MaestroConfig) -> EngineDeps {
    let mut deps = EngineDeps::in_memory();
    deps.policy = Arc::new(policy);
    deps.config = config;
    deps
}

impl Session {
    pub fn new(dir: &Path, deps: EngineDeps, script: &str, mode: Mode, planning: bool) -> (Self, TaskEngine) {
        Self::with_script(dir, deps, parse_script(script).expect("script"), mode, planning)
    }

    pub fn with_script(dir: &Path, deps: EngineDeps, script: Script, mode: Mode, planning: bool) -> (Self, TaskEngine) {
        let task_id = TaskId::generate();
        let engine = TaskEngine::create(deps.clone(), task_id.clone(), "fix a.txt", mode, planning, ThinkingEffort::Medium)
            .expect("create");
        let payloads = Arc::new(Mutex::new(Vec::new()));
        let driver = ScriptedDriver::new(script).with_recorder(payloads.clone());
        (
            Self {
                deps,
                task_id,
                workspace: Workspace::new(dir),
                driver,
                payloads,
                executor: ExecutorState::default(),
            },
            engine,
        )
    }

    pub fn answers(mut self, answers: impl IntoIterator<Item = Answer>) -> Self {
        for a in answers {
            match a {
                Answer::Approve | Answer::Deny(_) => self.executor.approvals.push_back(a),
                _ => self.executor.plans.push_back(a),
            }
        }
        self
    }

    pub async fn attach(&mut self, engine: &mut TaskEngine, kill: Option<Kill>, resume: Option<tiller_core::maestro::Directive>) -> LoopExit {
        let mut chan = SimExecutor::new(&self.workspace, &mut self.executor, kill);
        run_loop(engine, &mut self.driver, &mut chan, resume).await.expect("loop")
    }

    /// Runs to completion, resuming after every park (at most `max_attaches` times).
    pub async fn run(&mut self, mut engine: TaskEngine, mut kills: VecDeque<Kill>) -> TaskEngine {
        let mut resume = None;
        for _ in 0..20 {
            match self.attach(&mut engine, kills.pop_front(), resume.take()).await {
                LoopExit::Terminal(_) => return engine,
                LoopExit::Parked => {
                    let (e, d) = TaskEngine::resume(self.deps.clone(), &self.task_id).expect("resume");
                    engine = e;
                    resume = Some(d);
                }
            }
        }
        panic!("task never finished");
    }

    pub fn timeline(&self) -> Vec<TimelineEvent> {
        self.deps.log.read_timeline(&self.task_id, 1).unwrap()
    }

    pub fn kinds(&self) -> Vec<EventKind> {
        self.timeline().iter().map(|e| e.kind()).collect()
    }
}

pub fn kinds_without_connection(events: &[TimelineEvent]) -> Vec<EventKind> {
    events.iter().map(|e| e.kind()).filter(|k| !k.is_connection()).collect()
}

pub const GOLDEN_SCRIPT: &str = r#"
call read {"path":"a.txt"}
match=hello world ; call edit {"file_name":"a.txt","old_string":"world","new_string":"tiller"}
call shell {"command":"echo ok"}
match=ok ; final "done"
"#;

pub fn golden_kinds() -> Vec<EventKind> {
    use EventKind::*;
    vec![
        TaskCreated,
        BootstrapCompleted,
        ModelResponse,
        ToolDispatched,
        ToolResult,
        ModelResponse,
        ToolDispatched,
        ToolResult,
        ModelResponse,
        ToolDispatched,
        ToolResult,
        ModelResponse,
        TaskCompleted,
    ]
}
