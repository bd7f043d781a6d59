//! The `run` and `logs` commands, independent of argument parsing.

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use tiller_core::protocol::TaskId;
use tiller_core::state::EventKind;
use tiller_core::tools::Workspace;

use crate::api::{Api, ApiError, NewTask};
use crate::cache::InvocationCache;
use crate::executor::{connect, Activity, AttachError, Executor, FaultHook, SessionEnd};
use crate::prompt::Prompter;
use crate::render::event_line;

pub const EXIT_COMPLETED: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CANCELLED: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;

pub fn exit_code(terminal: EventKind) -> i32 {
    match terminal {
        EventKind::TaskCompleted => EXIT_COMPLETED,
        EventKind::TaskFailed => EXIT_FAILED,
        EventKind::TaskCancelled => EXIT_CANCELLED,
        _ => EXIT_TRANSPORT,
    }
}

fn status_exit_code(status: &str) -> Option<i32> {
    match status {
        "Completed" => Some(EXIT_COMPLETED),
        "Failed" => Some(EXIT_FAILED),
        "Cancelled" => Some(EXIT_CANCELLED),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub enum Target {
    New(NewTask),
    Resume(TaskId),
}

pub struct RunOptions {
    pub target: Target,
    pub workdir: PathBuf,
    /// Completed-invocation cache directory; in memory when unset.
    pub state_dir: Option<PathBuf>,
}

/// What a run did, beyond its exit code.
#[derive(Debug)]
pub struct RunReport {
    pub exit_code: i32,
    pub task_id: Option<TaskId>,
    pub end: Option<SessionEnd>,
    pub activity: Activity,
}

pub struct Run<'a> {
    pub api: &'a Api,
    pub prompter: Box<dyn Prompter>,
    pub out: Box<dyn Write + Send>,
    pub faults: Option<FaultHook>,
}

impl Run<'_> {
    pub async fn execute(self, opts: RunOptions) -> RunReport {
        let Run {
            api,
            prompter,
            mut out,
            faults,
        } = self;
        let mut report = RunReport {
            exit_code: EXIT_TRANSPORT,
            task_id: None,
            end: None,
            activity: Activity::default(),
        };
        let task_id = match opts.target {
            Target::Resume(id) => id,
            Target::New(task) => match api.create_task(&task).await {
                Ok(created) => {
                    for w in &created.policy_warnings {
                        let _ = writeln!(out, "policy warning: {w}");
                    }
                    let _ = writeln!(out, "task {}", created.task_id);
                    created.task_id
                }
                Err(e) => {
                    let _ = writeln!(out, "error: {e}");
                    return report;
                }
            },
        };
        report.task_id = Some(task_id.clone());

        let socket = match connect(api.base(), api.token(), &task_id).await {
            Ok(s) => s,
            Err(e) => {
                let _ = match &e {
                    AttachError::Rejected { .. } => writeln!(out, "{e}"),
                    AttachError::Connection(_) => writeln!(out, "error: {e}"),
                };
                return report;
            }
        };
        let cache = match &opts.state_dir {
            Some(dir) => match InvocationCache::open(dir, &task_id) {
                Ok(c) => c,
                Err(e) => {
                    let _ = writeln!(out, "warning: invocation cache unavailable ({e}); using memory");
                    InvocationCache::in_memory()
                }
            },
            None => InvocationCache::in_memory(),
        };
        let activity = Arc::new(Mutex::new(Activity::default()));
        let mut executor = Executor {
            workspace: Workspace::new(&opts.workdir),
            cache,
            prompter,
            out,
            faults,
            activity: activity.clone(),
        };
        let end = executor.serve(socket, &task_id).await;
        let mut out = executor.out;
        report.exit_code = match &end {
            SessionEnd::Terminal(kind) => exit_code(*kind),
            SessionEnd::Rejected(msg) => {
                let _ = writeln!(out, "attach rejected: {msg}");
                EXIT_TRANSPORT
            }
            SessionEnd::Closed | SessionEnd::Killed => {
                // the terminal update may have been lost with the connection
                let status = api.task(&task_id).await.ok().and_then(|v| v["status"].as_str().map(str::to_string));
                match status.as_deref().and_then(status_exit_code) {
                    Some(code) => code,
                    None => {
                        let _ = writeln!(out, "connection lost; continue with `tiller resume {task_id}`");
                        EXIT_TRANSPORT
                    }
                }
            }
        };
        report.end = Some(end);
        report.activity = activity.lock().expect("activity lock").clone();
        report
    }
}

/// Prints a task's timeline; with `follow`, tails it until the terminal event.
pub async fn logs(api: &Api, task_id: &TaskId, follow: bool, out: &mut (dyn Write + Send)) -> i32 {
    let result: Result<Option<EventKind>, ApiError> = if follow {
        api.follow(task_id, 1, |e| {
            let _ = writeln!(out, "{}", event_line(e));
        })
        .await
        .map(|last| last.map(|e| e.kind()))
    } else {
        api.events(task_id, 1).await.map(|events| {
            for e in &events {
                let _ = writeln!(out, "{}", event_line(e));
            }
            events.last().map(|e| e.kind())
        })
    };
    match result {
        Ok(_) => EXIT_COMPLETED,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            EXIT_TRANSPORT
        }
    }
}
