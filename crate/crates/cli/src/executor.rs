//! The executor session: attach over WebSocket, run dispatched tools in the
//! local workspace, ask the developer when the server needs a decision.

use std::io::Write;
use std::sync::{Arc, Mutex};

use futures::{SinkExt, StreamExt};
use tiller_core::protocol::{
    decode_message, encode_line, ApprovalDecision, BootstrapResult, InvocationId, Message, MessageBody, PlanDecision,
    TaskId, ToolResult,
};
use tiller_core::state::EventKind;
use tiller_core::tools::Workspace;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::{self, Message as WsMessage};

use crate::cache::InvocationCache;
use crate::prompt::Prompter;
use crate::render::event_line;

#[derive(Debug, thiserror::Error)]
pub enum AttachError {
    #[error("attach rejected ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("cannot connect: {0}")]
    Connection(String),
}

/// How one executor session ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionEnd {
    /// The server reported the terminal event.
    Terminal(EventKind),
    /// Closed without a terminal event; the task is parked server-side.
    Closed,
    /// Refused after the upgrade (the task could not be resumed).
    Rejected(String),
    /// Ended by an injected fault.
    Killed,
}

/// Points where a test can break the session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trigger {
    Received(Message),
    /// The tool ran and its outcome is cached, but the result is not sent yet.
    Executed(InvocationId),
    Sent(Message),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Drop the connection without a close handshake.
    Drop,
    /// Stay connected but stop answering, including pings.
    GoSilent,
}

pub type FaultHook = Box<dyn FnMut(&Trigger) -> Option<Fault> + Send>;

/// Shared record of what the executor actually did.
#[derive(Debug, Default, Clone)]
pub struct Activity {
    pub executed: Vec<InvocationId>,
    pub replayed: Vec<InvocationId>,
    pub results_sent: Vec<InvocationId>,
}

pub struct Executor {
    pub workspace: Workspace,
    pub cache: InvocationCache,
    pub prompter: Box<dyn Prompter>,
    pub out: Box<dyn Write + Send>,
    pub faults: Option<FaultHook>,
    pub activity: Arc<Mutex<Activity>>,
}

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

pub fn attach_url(server: &str, task_id: &TaskId) -> String {
    let server = server.trim_end_matches('/');
    let ws = match server.strip_prefix("http") {
        Some(rest) => format!("ws{rest}"),
        None => server.to_string(),
    };
    format!("{ws}/attach?task_id={task_id}")
}

pub async fn connect(server: &str, token: Option<&str>, task_id: &TaskId) -> Result<Socket, AttachError> {
    let mut req = attach_url(server, task_id)
        .into_client_request()
        .map_err(|e| AttachError::Connection(e.to_string()))?;
    if let Some(t) = token {
        let value = format!("Bearer {t}").parse().map_err(|_| AttachError::Connection("token is not a valid header".into()))?;
        req.headers_mut().insert("authorization", value);
    }
    match tokio_tungstenite::connect_async(req).await {
        Ok((socket, _)) => Ok(socket),
        Err(tungstenite::Error::Http(resp)) => {
            let status = resp.status().as_u16();
            let body: serde_json::Value = resp
                .body()
                .as_deref()
                .and_then(|b| serde_json::from_slice(b).ok())
                .unwrap_or_default();
            let message = match (body["error"].as_str(), body["message"].as_str()) {
                (Some(code), Some(msg)) => format!("{code}: {msg}"),
                _ => format!("HTTP {status}"),
            };
            Err(AttachError::Rejected { status, message })
        }
        Err(e) => Err(AttachError::Connection(e.to_string())),
    }
}

impl Executor {
    pub fn new(workspace: Workspace, cache: InvocationCache, prompter: Box<dyn Prompter>, out: Box<dyn Write + Send>) -> Self {
        Self {
            workspace,
            cache,
            prompter,
            out,
            faults: None,
            activity: Arc::default(),
        }
    }

    fn fault(&mut self, trigger: Trigger) -> Option<Fault> {
        self.faults.as_mut().and_then(|hook| hook(&trigger))
    }

    fn print(&mut self, line: &str) {
        let _ = writeln!(self.out, "{line}");
        let _ = self.out.flush();
    }

    async fn send(&mut self, socket: &mut Socket, msg: Message) -> Result<Option<Fault>, ()> {
        socket.send(WsMessage::text(encode_line(&msg))).await.map_err(drop)?;
        Ok(self.fault(Trigger::Sent(msg)))
    }

    /// Serves one attached session until the server closes it.
    pub async fn serve(&mut self, mut socket: Socket, task_id: &TaskId) -> SessionEnd {
        let mut terminal = None;
        while let Some(frame) = socket.next().await {
            let text = match frame {
                Ok(WsMessage::Text(t)) => t,
                Ok(WsMessage::Close(_)) | Err(_) => break,
                Ok(_) => continue,
            };
            let msg = match decode_message(text.as_bytes()) {
                Ok(m) => m,
                Err(e) => {
                    self.print(&format!("ignoring bad frame from server: {e}"));
                    continue;
                }
            };
            if &msg.task_id != task_id {
                continue;
            }
            if let Some(fault) = self.fault(Trigger::Received(msg.clone())) {
                return self.apply(fault, socket).await;
            }
            let inv = msg.invocation_id.clone();
            let reply = match msg.body {
                MessageBody::BootstrapRequest(_) => {
                    let metadata = self.workspace.bootstrap().await;
                    Some(Message::new(task_id.clone(), MessageBody::BootstrapResult(BootstrapResult { metadata })))
                }
                MessageBody::ToolDispatch(d) => {
                    let Some(inv) = inv else { continue };
                    let outcome = match self.cache.get(&inv) {
                        Some(done) => {
                            self.activity.lock().expect("activity lock").replayed.push(inv.clone());
                            done.clone()
                        }
                        None => {
                            let outcome = self.workspace.execute(&d.tool, &d.args, d.expected_hash.as_deref()).await;
                            if let Err(e) = self.cache.put(inv.clone(), outcome.clone()) {
                                self.print(&format!("warning: cannot record {inv} as done: {e}"));
                            }
                            self.activity.lock().expect("activity lock").executed.push(inv.clone());
                            if let Some(fault) = self.fault(Trigger::Executed(inv.clone())) {
                                return self.apply(fault, socket).await;
                            }
                            outcome
                        }
                    };
                    self.activity.lock().expect("activity lock").results_sent.push(inv.clone());
                    Some(Message::for_invocation(task_id.clone(), inv, MessageBody::ToolResult(ToolResult { outcome })))
                }
                MessageBody::ApprovalRequest(r) => {
                    let answer = self.prompter.approve(inv.as_ref(), &r);
                    let body = MessageBody::ApprovalDecision(ApprovalDecision {
                        decision: answer.verdict,
                        reason: answer.reason,
                    });
                    Some(match inv {
                        Some(inv) => Message::for_invocation(task_id.clone(), inv, body),
                        None => Message::new(task_id.clone(), body),
                    })
                }
                MessageBody::PlanProposed(p) => {
                    let answer = self.prompter.plan(&p.steps);
                    Some(Message::new(
                        task_id.clone(),
                        MessageBody::PlanDecision(PlanDecision {
                            decision: answer.verdict,
                            modified_steps: answer.steps,
                        }),
                    ))
                }
                MessageBody::TaskUpdate(u) => {
                    self.print(&event_line(&u.event));
                    if u.event.kind().is_terminal() {
                        terminal = Some(u.event.kind());
                    }
                    None
                }
                MessageBody::Error(e) => {
                    self.print(&format!("server error {}: {}", e.code, e.message));
                    if e.code == "AttachRejected" {
                        return SessionEnd::Rejected(e.message);
                    }
                    None
                }
                MessageBody::Ping(h) => Some(Message::new(task_id.clone(), MessageBody::Pong(h))),
                _ => None,
            };
            if let Some(reply) = reply {
                match self.send(&mut socket, reply).await {
                    Ok(Some(fault)) => return self.apply(fault, socket).await,
                    Ok(None) => {}
                    Err(()) => break,
                }
            }
        }
        terminal.map(SessionEnd::Terminal).unwrap_or(SessionEnd::Closed)
    }

    async fn apply(&mut self, fault: Fault, mut socket: Socket) -> SessionEnd {
        match fault {
            Fault::Drop => drop(socket),
            Fault::GoSilent => while let Some(Ok(frame)) = socket.next().await {
                if matches!(frame, WsMessage::Close(_)) {
                    break;
                }
            },
        }
        SessionEnd::Killed
    }
}
