#![allow(dead_code)]

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use tiller_cli::{Api, FaultHook, NewTask, Prompter, Run, RunOptions, RunReport, Target};
use tiller_core::model::{parse_script, DriverFactory, ModelDriver, Script, ScriptedDriver};
use tiller_core::protocol::TaskId;
use tiller_core::state::{EventKind, TimelineEvent};
use tiller_server::{RunningServer, ServerConfig};

pub const GOLDEN: &str = r#"
call read {"path":"a.txt"}
match=hello world ; call edit {"file_name":"a.txt","old_string":"world","new_string":"tiller"}
call shell {"command":"echo ok"}
match=ok ; final "done"
"#;

pub const GOLDEN_BYTES: &str = "hello tiller\n";

/// Each task's prompt picks its script; unknown prompts answer `final done`.
pub fn scripts(pairs: &[(&str, &str)]) -> Arc<dyn DriverFactory> {
    let table: HashMap<String, Script> = pairs
        .iter()
        .map(|(p, s)| (p.to_string(), parse_script(s).expect("test script parses")))
        .collect();
    Arc::new(move |prompt: &str| -> Box<dyn ModelDriver> {
        let script = table.get(prompt).cloned().unwrap_or_else(|| parse_script("final done").unwrap());
        Box::new(ScriptedDriver::new(script))
    })
}

pub struct Fixture {
    pub server: RunningServer,
    pub api: Api,
}

impl Fixture {
    pub async fn start(cfg: ServerConfig, pairs: &[(&str, &str)]) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let server = tiller_server::start(cfg, scripts(pairs), listener).await.unwrap();
        let api = Api::new(&server.url(), None);
        Self { server, api }
    }

    pub async fn timeline(&self, task: &TaskId) -> Vec<TimelineEvent> {
        self.api.events(task, 1).await.unwrap()
    }

    pub async fn kinds(&self, task: &TaskId) -> Vec<EventKind> {
        self.timeline(task).await.iter().map(TimelineEvent::kind).collect()
    }

    pub async fn status(&self, task: &TaskId) -> String {
        self.api.task(task).await.unwrap()["status"].as_str().unwrap().to_string()
    }

    pub async fn wait_parked(&self, task: &TaskId) {
        for _ in 0..500 {
            let v = self.api.task(task).await.unwrap();
            if v["executor_attached"] == false {
                return;
            }
            tokio::time::sleep(std::time::Duration::from_millis(10)).await;
        }
        panic!("executor never detached from {task}");
    }

    pub async fn stop(self) {
        self.server.stop().await;
    }
}

pub fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "hello world\n").unwrap();
    dir
}

pub fn new_task(prompt: &str, mode: &str, planning: bool) -> Target {
    Target::New(NewTask {
        prompt: prompt.into(),
        mode: mode.into(),
        planning,
        effort: "medium".into(),
        policy: None,
    })
}

#[derive(Clone, Default)]
pub struct SharedBuf(pub Arc<Mutex<Vec<u8>>>);

impl SharedBuf {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.0.lock().unwrap()).into_owned()
    }
}

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// One executor process lifetime, in-process.
pub async fn run(
    api: &Api,
    target: Target,
    workdir: &Path,
    state_dir: Option<&Path>,
    prompter: Box<dyn Prompter>,
    faults: Option<FaultHook>,
) -> (RunReport, String) {
    let out = SharedBuf::default();
    let report = Run {
        api,
        prompter,
        out: Box::new(out.clone()),
        faults,
    }
    .execute(RunOptions {
        target,
        workdir: workdir.to_path_buf(),
        state_dir: state_dir.map(Path::to_path_buf),
    })
    .await;
    (report, out.text())
}

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

pub fn without_connection(kinds: &[EventKind]) -> Vec<EventKind> {
    kinds.iter().copied().filter(|k| !k.is_connection()).collect()
}
