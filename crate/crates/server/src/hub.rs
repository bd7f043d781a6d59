//! Task registry: one slot per task holding its engine while parked and the
//! handle of the executor session while a loop runs.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use tokio::sync::{mpsc, oneshot, watch, Notify};
use tiller_core::maestro::{
    Directive, EngineDeps, EngineError, Inbound, Mode, TaskEngine, TaskRecord, TaskStatus,
};
use tiller_core::model::{DriverFactory, ModelDriver, ThinkingEffort};
use tiller_core::protocol::{ApprovalVerdict, InvocationId, Manifest, PlanVerdict, TaskId};
use tiller_core::safety::GapWarning;
use tiller_core::state::{
    replay, EventBody, EventKind, EventLog, FileEventLog, MemoryEventLog, StateError, TimelineEvent, TwoTierStore,
};

use crate::config::{PolicyDir, PolicyLookupError, ServerConfig};

/// Event log that wakes stream subscribers after every append.
pub struct NotifyLog {
    inner: Box<dyn EventLog>,
    heads: Mutex<HashMap<TaskId, watch::Sender<u64>>>,
}

impl NotifyLog {
    pub fn new(inner: Box<dyn EventLog>) -> Self {
        Self {
            inner,
            heads: Mutex::new(HashMap::new()),
        }
    }

    /// Receiver that changes whenever the task gains an event.
    pub fn subscribe(&self, task_id: &TaskId) -> watch::Receiver<u64> {
        let mut heads = self.heads.lock().expect("heads lock");
        heads.entry(task_id.clone()).or_insert_with(|| watch::channel(0).0).subscribe()
    }
}

impl EventLog for NotifyLog {
    fn append_event(&self, task_id: &TaskId, body: EventBody) -> Result<TimelineEvent, StateError> {
        let event = self.inner.append_event(task_id, body)?;
        let mut heads = self.heads.lock().expect("heads lock");
        heads
            .entry(task_id.clone())
            .or_insert_with(|| watch::channel(0).0)
            .send_replace(event.seq);
        Ok(event)
    }

    fn read_timeline(&self, task_id: &TaskId, from_seq: u64) -> Result<Vec<TimelineEvent>, StateError> {
        self.inner.read_timeline(task_id, from_seq)
    }

    fn list_tasks(&self) -> Result<Vec<TaskId>, StateError> {
        self.inner.list_tasks()
    }
}

/// The executor session currently serving a task.
#[derive(Clone)]
pub(crate) struct Live {
    pub generation: u64,
    pub inbox: mpsc::UnboundedSender<Inbound>,
    pub last_activity: Arc<Mutex<Instant>>,
    pub close: Arc<Notify>,
    dropping: Arc<AtomicBool>,
}

impl Live {
    pub fn touch(&self) {
        *self.last_activity.lock().expect("activity lock") = Instant::now();
    }
}

struct SlotInner {
    deps: EngineDeps,
    /// Present unless a loop is running.
    engine: Option<TaskEngine>,
    driver: Option<Box<dyn ModelDriver>>,
    /// Never attached: run the engine as is instead of resuming it.
    fresh: bool,
    live: Option<Live>,
}

pub struct TaskSlot {
    pub task_id: TaskId,
    inner: Mutex<SlotInner>,
}

impl TaskSlot {
    fn lock(&self) -> MutexGuard<'_, SlotInner> {
        self.inner.lock().expect("task slot lock")
    }
}

#[derive(Debug, Clone)]
pub struct CreateTask {
    pub prompt: String,
    pub mode: Mode,
    pub planning: bool,
    pub effort: ThinkingEffort,
    pub policy: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CreateError {
    #[error(transparent)]
    Policy(#[from] PolicyLookupError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttachError {
    #[error("unknown task {0}")]
    TaskNotFound(TaskId),
    #[error("task {0} already has an executor attached")]
    ExecutorAlreadyAttached(TaskId),
    #[error("task is already {0:?}")]
    TaskTerminal(TaskStatus),
    #[error("task cannot be resumed: {0}")]
    Resume(String),
}

/// A user action posted over HTTP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Approve { invocation_id: Option<InvocationId>, reason: Option<String> },
    Deny { invocation_id: Option<InvocationId>, reason: Option<String> },
    PlanApprove,
    PlanModify { steps: Vec<String> },
    PlanReject { reason: Option<String> },
    Cancel { reason: Option<String> },
}

impl Action {
    fn into_inbound(self, reply: Option<oneshot::Sender<Result<(), EngineError>>>) -> Inbound {
        match self {
            Action::Approve { invocation_id, reason } => Inbound::Approval {
                invocation_id,
                decision: ApprovalVerdict::Approve,
                reason,
                reply,
            },
            Action::Deny { invocation_id, reason } => Inbound::Approval {
                invocation_id,
                decision: ApprovalVerdict::Deny,
                reason,
                reply,
            },
            Action::PlanApprove => Inbound::PlanDecision {
                decision: PlanVerdict::Approved,
                modified_steps: None,
                reason: None,
                reply,
            },
            Action::PlanModify { steps } => Inbound::PlanDecision {
                decision: PlanVerdict::Modified,
                modified_steps: Some(steps),
                reason: None,
                reply,
            },
            Action::PlanReject { reason } => Inbound::PlanDecision {
                decision: PlanVerdict::Rejected,
                modified_steps: None,
                reason,
                reply,
            },
            Action::Cancel { reason } => Inbound::Cancel { reason, reply },
        }
    }

    fn apply(self, engine: &mut TaskEngine) -> Result<(), EngineError> {
        let result = match self {
            Action::Approve { invocation_id, reason } => engine
                .handle_approval(invocation_id.as_ref(), ApprovalVerdict::Approve, reason)
                .map(drop),
            Action::Deny { invocation_id, reason } => engine
                .handle_approval(invocation_id.as_ref(), ApprovalVerdict::Deny, reason)
                .map(drop),
            Action::PlanApprove => engine.handle_plan_decision(PlanVerdict::Approved, None, None).map(drop),
            Action::PlanModify { steps } => engine
                .handle_plan_decision(PlanVerdict::Modified, Some(steps), None)
                .map(drop),
            Action::PlanReject { reason } => engine.handle_plan_decision(PlanVerdict::Rejected, None, reason).map(drop),
            Action::Cancel { reason } => engine.cancel(reason),
        };
        // the next attach re-derives what to present from the stored state
        engine.take_events();
        result
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ActionError {
    #[error("unknown task {0}")]
    TaskNotFound(TaskId),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("task is busy changing executors; retry")]
    Busy,
}

/// A reserved executor slot, handed to the WebSocket once upgraded.
pub(crate) struct Claim {
    pub slot: Arc<TaskSlot>,
    pub live: Live,
    pub inbox: mpsc::UnboundedReceiver<Inbound>,
}

pub(crate) struct Started {
    pub engine: TaskEngine,
    pub driver: Box<dyn ModelDriver>,
    pub directive: Option<Directive>,
}

pub struct Hub {
    pub(crate) cfg: ServerConfig,
    log: Arc<NotifyLog>,
    store: Arc<TwoTierStore>,
    manifest: Arc<Manifest>,
    policies: PolicyDir,
    drivers: Arc<dyn DriverFactory>,
    tasks: Mutex<HashMap<TaskId, Arc<TaskSlot>>>,
    generations: AtomicU64,
    meta_path: Option<PathBuf>,
    /// task id → policy name chosen at creation
    meta: Mutex<BTreeMap<String, Option<String>>>,
}

const META_FILE: &str = "task-policies.json";

impl Hub {
    /// Opens storage and re-registers every task found in it.
    pub fn open(cfg: ServerConfig, drivers: Arc<dyn DriverFactory>) -> anyhow::Result<Arc<Self>> {
        let (inner, store): (Box<dyn EventLog>, TwoTierStore) = match &cfg.data_dir {
            Some(dir) => (
                Box::new(FileEventLog::open(dir)?),
                TwoTierStore::on_disk(dir, cfg.session_ttl)?,
            ),
            None => (Box::new(MemoryEventLog::new()), TwoTierStore::in_memory()),
        };
        let meta_path = cfg.data_dir.as_ref().map(|d| d.join(META_FILE));
        let meta = match &meta_path {
            Some(p) if p.is_file() => serde_json::from_slice(&std::fs::read(p)?)?,
            _ => BTreeMap::new(),
        };
        let hub = Arc::new(Self {
            policies: PolicyDir::new(cfg.policy_dir.clone()),
            cfg,
            log: Arc::new(NotifyLog::new(inner)),
            store: Arc::new(store),
            manifest: Arc::new(Manifest::builtin()),
            drivers,
            tasks: Mutex::new(HashMap::new()),
            generations: AtomicU64::new(0),
            meta_path,
            meta: Mutex::new(meta),
        });
        hub.recover()?;
        Ok(hub)
    }

    fn deps(&self, policy: Option<&str>) -> Result<(EngineDeps, Vec<GapWarning>), PolicyLookupError> {
        let (policy, warnings) = self.policies.load(policy, &self.manifest)?;
        Ok((
            EngineDeps {
                log: self.log.clone(),
                store: self.store.clone(),
                policy: Arc::new(policy),
                manifest: self.manifest.clone(),
                config: self.cfg.maestro.clone(),
            },
            warnings,
        ))
    }

    fn recover(&self) -> anyhow::Result<()> {
        for task_id in self.log.list_tasks()? {
            let events = self.log.read_timeline(&task_id, 1)?;
            let Some(EventBody::TaskCreated { prompt, .. }) = events.first().map(|e| &e.body) else {
                tracing::warn!(%task_id, "timeline does not start with TaskCreated; skipped");
                continue;
            };
            let policy = self.meta.lock().expect("meta lock").get(task_id.as_str()).cloned().flatten();
            let deps = match self.deps(policy.as_deref()) {
                Ok((d, _)) => d,
                Err(e) => {
                    tracing::warn!(%task_id, "policy unavailable after restart ({e}); using the default");
                    self.deps(None)?.0
                }
            };
            let engine = TaskEngine::restore(deps.clone(), &task_id)?;
            let driver = (!engine.status().is_terminal()).then(|| {
                let mut d = self.drivers.create(prompt);
                d.resume_after(events.iter().filter(|e| e.kind() == EventKind::ModelResponse).count());
                d
            });
            self.insert(task_id, deps, engine, driver, false);
        }
        Ok(())
    }

    fn insert(&self, task_id: TaskId, deps: EngineDeps, engine: TaskEngine, driver: Option<Box<dyn ModelDriver>>, fresh: bool) {
        let slot = Arc::new(TaskSlot {
            task_id: task_id.clone(),
            inner: Mutex::new(SlotInner {
                deps,
                engine: Some(engine),
                driver,
                fresh,
                live: None,
            }),
        });
        self.tasks.lock().expect("tasks lock").insert(task_id, slot);
    }

    pub fn log(&self) -> &Arc<NotifyLog> {
        &self.log
    }

    pub fn store(&self) -> &Arc<TwoTierStore> {
        &self.store
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn slot(&self, task_id: &TaskId) -> Option<Arc<TaskSlot>> {
        self.tasks.lock().expect("tasks lock").get(task_id).cloned()
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        self.tasks.lock().expect("tasks lock").keys().cloned().collect()
    }

    pub fn create_task(&self, req: CreateTask) -> Result<(TaskId, Vec<GapWarning>), CreateError> {
        let (deps, warnings) = self.deps(req.policy.as_deref())?;
        let task_id = TaskId::generate();
        let mut engine = TaskEngine::create(deps.clone(), task_id.clone(), &req.prompt, req.mode, req.planning, req.effort)?;
        // already durable; the executor learns about TaskCreated from the timeline, not the channel
        engine.take_events();
        self.remember_policy(&task_id, req.policy.clone());
        let driver = self.drivers.create(&req.prompt);
        self.insert(task_id.clone(), deps, engine, Some(driver), true);
        Ok((task_id, warnings))
    }

    fn remember_policy(&self, task_id: &TaskId, policy: Option<String>) {
        let mut meta = self.meta.lock().expect("meta lock");
        meta.insert(task_id.to_string(), policy);
        if let Some(path) = &self.meta_path {
            let tmp = path.with_extension("json.tmp");
            let written = serde_json::to_vec_pretty(&*meta)
                .map_err(std::io::Error::other)
                .and_then(|bytes| std::fs::write(&tmp, bytes))
                .and_then(|_| std::fs::rename(&tmp, path));
            if let Err(e) = written {
                tracing::warn!(%task_id, "could not persist task policy: {e}");
            }
        }
    }

    /// The task's state as recorded in its timeline.
    pub fn task_record(&self, task_id: &TaskId) -> Result<Option<TaskRecord>, EngineError> {
        let events = self.log.read_timeline(task_id, 1)?;
        Ok(replay(&events)?)
    }

    pub fn executor_attached(&self, task_id: &TaskId) -> bool {
        self.slot(task_id).is_some_and(|s| s.lock().live.is_some())
    }

    pub(crate) fn claim(&self, task_id: &TaskId) -> Result<Claim, AttachError> {
        let slot = self.slot(task_id).ok_or_else(|| AttachError::TaskNotFound(task_id.clone()))?;
        let mut inner = slot.lock();
        if let Some(live) = &inner.live {
            if !live.inbox.is_closed() {
                return Err(AttachError::ExecutorAlreadyAttached(task_id.clone()));
            }
            // reserved by an upgrade that never happened
            inner.live = None;
        }
        if let Some(engine) = &inner.engine {
            if engine.status().is_terminal() {
                return Err(AttachError::TaskTerminal(engine.status()));
            }
        }
        let (tx, rx) = mpsc::unbounded_channel();
        let live = Live {
            generation: self.generations.fetch_add(1, Ordering::Relaxed) + 1,
            inbox: tx,
            last_activity: Arc::new(Mutex::new(Instant::now())),
            close: Arc::new(Notify::new()),
            dropping: Arc::new(AtomicBool::new(false)),
        };
        inner.live = Some(live.clone());
        drop(inner);
        Ok(Claim { slot, live, inbox: rx })
    }

    /// Takes the engine out of the slot: fresh tasks run as is, parked ones are resumed.
    pub(crate) fn start(&self, claim: &Claim) -> Result<Started, AttachError> {
        let mut inner = claim.slot.lock();
        let (Some(engine), Some(driver)) = (inner.engine.take(), inner.driver.take()) else {
            inner.live = None;
            return Err(AttachError::Resume("task has no engine".into()));
        };
        if inner.fresh && engine.status() == TaskStatus::Created {
            inner.fresh = false;
            return Ok(Started {
                engine,
                driver,
                directive: None,
            });
        }
        drop(engine);
        match TaskEngine::resume(inner.deps.clone(), &claim.slot.task_id) {
            Ok((engine, directive)) => Ok(Started {
                engine,
                driver,
                directive: Some(directive),
            }),
            Err(e) => {
                let restored = TaskEngine::restore(inner.deps.clone(), &claim.slot.task_id).ok();
                inner.engine = restored;
                inner.driver = Some(driver);
                inner.live = None;
                Err(match e {
                    EngineError::TaskTerminal(s) => AttachError::TaskTerminal(s),
                    other => AttachError::Resume(other.to_string()),
                })
            }
        }
    }

    /// Puts the engine back after a loop ends and releases the session.
    pub(crate) fn finish(&self, slot: &TaskSlot, generation: u64, engine: TaskEngine, driver: Box<dyn ModelDriver>) {
        let mut inner = slot.lock();
        inner.engine = Some(engine);
        inner.driver = Some(driver);
        if inner.live.as_ref().is_some_and(|l| l.generation == generation) {
            inner.live = None;
        }
    }

    /// Routes an action to the running loop, or applies it to the parked engine.
    pub async fn act(&self, task_id: &TaskId, action: Action) -> Result<(), ActionError> {
        let slot = self.slot(task_id).ok_or_else(|| ActionError::TaskNotFound(task_id.clone()))?;
        for _ in 0..100 {
            let inbox = {
                let mut guard = slot.lock();
                let inner = &mut *guard;
                match (&inner.live, inner.engine.as_mut()) {
                    (None, Some(engine)) => return action.apply(engine).map_err(ActionError::from),
                    (Some(live), _) => Some((live.inbox.clone(), live.generation)),
                    (None, None) => None,
                }
            };
            if let Some((inbox, generation)) = inbox {
                let (tx, rx) = oneshot::channel();
                if inbox.send(action.clone().into_inbound(Some(tx))).is_ok() {
                    match rx.await {
                        Ok(result) => return result.map_err(ActionError::from),
                        // the loop exited with the action unread; it is parked now
                        Err(_) => {}
                    }
                } else {
                    let mut inner = slot.lock();
                    if inner.live.as_ref().is_some_and(|l| l.generation == generation) && inner.engine.is_some() {
                        inner.live = None;
                    }
                }
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        Err(ActionError::Busy)
    }

    /// Drops executor sessions idle for longer than the inactivity timeout; their tasks park.
    pub fn inactivity_sweep(&self, now: Instant) -> Vec<TaskId> {
        let slots: Vec<Arc<TaskSlot>> = self.tasks.lock().expect("tasks lock").values().cloned().collect();
        let mut dropped = Vec::new();
        for slot in slots {
            let mut inner = slot.lock();
            let Some(live) = inner.live.clone() else { continue };
            if live.inbox.is_closed() && inner.engine.is_some() {
                inner.live = None;
                continue;
            }
            let idle = now.saturating_duration_since(*live.last_activity.lock().expect("activity lock"));
            if idle > self.cfg.inactivity_timeout && !live.dropping.swap(true, Ordering::SeqCst) {
                let _ = live.inbox.send(Inbound::Disconnected {
                    reason: format!("no executor activity for {}s", idle.as_secs()),
                });
                live.close.notify_one();
                dropped.push(slot.task_id.clone());
            }
        }
        dropped
    }

    /// Disconnects every executor, for shutdown.
    pub fn close_all(&self) {
        let slots: Vec<Arc<TaskSlot>> = self.tasks.lock().expect("tasks lock").values().cloned().collect();
        for slot in slots {
            if let Some(live) = slot.lock().live.clone() {
                let _ = live.inbox.send(Inbound::Disconnected {
                    reason: "server shutting down".into(),
                });
                live.close.notify_one();
            }
        }
    }
}
