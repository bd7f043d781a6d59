#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use reqwest::StatusCode;
use serde_json::Value;
use tiller_core::model::{parse_script, ModelDriver, Script, ScriptedDriver};
use tiller_core::protocol::{
    decode_message, encode_line, BootstrapResult, Message, MessageBody, TaskId, ToolResult,
};
use tiller_core::state::{EventKind, TimelineEvent};
use tiller_core::tools::Workspace;
use tiller_server::{RunningServer, ServerConfig};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::Message as WsMessage;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub const GOLDEN: &str = r#"
call read {"path":"a.txt"}
match=hello world ; call edit {"file_name":"a.txt","old_string":"world","new_string":"tiller"}
call shell {"command":"echo ok"}
match=ok ; final "done"
"#;

/// Each task's prompt picks its script; unknown prompts answer `final done`.
pub fn scripts(pairs: &[(&str, &str)]) -> Arc<dyn tiller_core::model::DriverFactory> {
    let table: HashMap<String, Script> = pairs
        .iter()
        .map(|(p, s)| (p.to_string(), parse_script(s).expect("test script parses")))
        .collect();
    Arc::new(move |prompt: &str| -> Box<dyn ModelDriver> {
        let script = table.get(prompt).cloned().unwrap_or_else(|| parse_script("final done").unwrap());
        Box::new(ScriptedDriver::new(script))
    })
}

pub async fn serve(cfg: ServerConfig, pairs: &[(&str, &str)]) -> RunningServer {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    tiller_server::start(cfg, scripts(pairs), listener).await.unwrap()
}

pub fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "hello world\n").unwrap();
    dir
}

pub struct Api {
    pub base: String,
    pub token: Option<String>,
    http: reqwest::Client,
}

impl Api {
    pub fn new(server: &RunningServer) -> Self {
        Self {
            base: server.url(),
            token: None,
            http: reqwest::Client::new(),
        }
    }

    fn auth(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    async fn finish(req: reqwest::RequestBuilder) -> (StatusCode, Value) {
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let body = resp.json().await.unwrap_or(Value::Null);
        (status, body)
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        Self::finish(self.auth(self.http.post(format!("{}{path}", self.base)).json(&body))).await
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        Self::finish(self.auth(self.http.get(format!("{}{path}", self.base)))).await
    }

    pub async fn create(&self, body: Value) -> TaskId {
        let (status, v) = self.post("/tasks", body).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        TaskId::new(v["task_id"].as_str().unwrap())
    }

    pub async fn events(&self, task: &TaskId) -> Vec<TimelineEvent> {
        let (status, v) = self.get(&format!("/tasks/{task}/events?from_seq=1")).await;
        assert_eq!(status, StatusCode::OK);
        serde_json::from_value(v["events"].clone()).unwrap()
    }

    pub async fn kinds(&self, task: &TaskId) -> Vec<EventKind> {
        self.events(task).await.iter().map(TimelineEvent::kind).collect()
    }

    pub async fn status(&self, task: &TaskId) -> String {
        let (_, v) = self.get(&format!("/tasks/{task}")).await;
        v["status"].as_str().unwrap_or_default().to_string()
    }

    pub async fn action(&self, task: &TaskId, body: Value) -> (StatusCode, Value) {
        self.post(&format!("/tasks/{task}/actions"), body).await
    }

    /// Reads the SSE stream until the server closes it.
    pub async fn stream(&self, task: &TaskId) -> Vec<TimelineEvent> {
        let resp = self
            .auth(self.http.get(format!("{}/tasks/{task}/stream?from_seq=1", self.base)))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        let mut bytes = resp.bytes_stream();
        let mut buf = String::new();
        let mut out = Vec::new();
        while let Some(chunk) = bytes.next().await {
            buf.push_str(std::str::from_utf8(&chunk.unwrap()).unwrap());
            while let Some(end) = buf.find("\n\n") {
                let frame: String = buf.drain(..end + 2).collect();
                for line in frame.lines() {
                    if let Some(data) = line.strip_prefix("data: ") {
                        out.push(serde_json::from_str(data).unwrap());
                    }
                }
            }
        }
        out
    }

    pub async fn wait_status(&self, task: &TaskId, want: &str) {
        for _ in 0..300 {
            if self.status(task).await == want {
                return;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("task {task} never reached {want}; now {}", self.status(task).await);
    }
}

pub struct Ws {
    pub task_id: TaskId,
    inner: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

pub async fn attach(server: &RunningServer, task: &TaskId, token: Option<&str>) -> Result<Ws, StatusCode> {
    let url = format!("ws://{}/attach?task_id={task}", server.addr);
    let mut req = url.into_client_request().unwrap();
    if let Some(t) = token {
        req.headers_mut().insert("authorization", format!("Bearer {t}").parse().unwrap());
    }
    match tokio_tungstenite::connect_async(req).await {
        Ok((inner, _)) => Ok(Ws {
            task_id: task.clone(),
            inner,
        }),
        Err(tokio_tungstenite::tungstenite::Error::Http(resp)) => Err(StatusCode::from_u16(resp.status().as_u16()).unwrap()),
        Err(e) => panic!("attach failed: {e}"),
    }
}

impl Ws {
    pub async fn send(&mut self, msg: Message) {
        self.inner.send(WsMessage::text(encode_line(&msg))).await.unwrap();
    }

    pub async fn send_raw(&mut self, text: &str) {
        self.inner.send(WsMessage::text(text.to_string())).await.unwrap();
    }

    /// Next protocol message other than Ping (answered here); None once the server closes.
    pub async fn next(&mut self) -> Option<Message> {
        loop {
            let frame = tokio::time::timeout(Duration::from_secs(5), self.inner.next())
                .await
                .expect("server went quiet")?;
            match frame {
                Ok(WsMessage::Text(t)) => {
                    let msg = decode_message(t.as_bytes()).expect("server sends valid lines");
                    match msg.body {
                        MessageBody::Ping(h) => self.send(Message::new(self.task_id.clone(), MessageBody::Pong(h))).await,
                        _ => return Some(msg),
                    }
                }
                Ok(WsMessage::Close(_)) | Err(_) => return None,
                Ok(_) => {}
            }
        }
    }

    /// Skips task updates until a message that asks something of the executor.
    pub async fn next_order(&mut self) -> Option<Message> {
        loop {
            let msg = self.next().await?;
            if !matches!(msg.body, MessageBody::TaskUpdate(_)) {
                return Some(msg);
            }
        }
    }

    pub async fn close(mut self) {
        let _ = self.inner.close(None).await;
    }

    /// Answers bootstrap and dispatches until the task ends; approvals are not expected.
    pub async fn drive(&mut self, dir: &Path) -> Vec<Message> {
        let ws = Workspace::new(dir);
        let mut seen = Vec::new();
        while let Some(msg) = self.next().await {
            seen.push(msg.clone());
            match msg.body {
                MessageBody::BootstrapRequest(_) => {
                    let metadata = ws.bootstrap().await;
                    self.send(Message::new(self.task_id.clone(), MessageBody::BootstrapResult(BootstrapResult { metadata })))
                        .await;
                }
                MessageBody::ToolDispatch(d) => {
                    let outcome = ws.execute(&d.tool, &d.args, d.expected_hash.as_deref()).await;
                    let inv = msg.invocation_id.unwrap();
                    self.send(Message::for_invocation(self.task_id.clone(), inv, MessageBody::ToolResult(ToolResult { outcome })))
                        .await;
                }
                _ => {}
            }
        }
        seen
    }
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
