//! The executor channel: one WebSocket per attached executor, speaking the
//! line protocol, bridged to the task loop.

use std::sync::Arc;

use async_trait::async_trait;
use axum::extract::ws::{Message as WsMessage, WebSocket};
use futures::{SinkExt, StreamExt};
use tokio::sync::{mpsc, oneshot};
use tiller_core::maestro::{run_loop, ChannelClosed, EngineError, ExecutorChannel, Inbound, LoopExit, Outbound};
use tiller_core::protocol::{
    decode_message, encode_line, ApprovalRequest, BootstrapRequest, DecodeError, Heartbeat, Message, MessageBody,
    PlanProposed, TaskId, TaskUpdate, ToolDispatch,
};

use crate::hub::{Claim, Hub, Live};

struct WsChannel {
    task_id: TaskId,
    out: mpsc::Sender<Message>,
    inbox: mpsc::UnboundedReceiver<Inbound>,
}

fn outbound_message(task_id: &TaskId, msg: Outbound) -> Message {
    let task_id = task_id.clone();
    match msg {
        Outbound::BootstrapRequest => Message::new(task_id, MessageBody::BootstrapRequest(BootstrapRequest {})),
        Outbound::Dispatch(o) => Message::for_invocation(
            task_id,
            o.invocation_id,
            MessageBody::ToolDispatch(ToolDispatch {
                tool: o.tool,
                args: o.args,
                redispatch: o.redispatch,
                expected_hash: o.expected_hash,
            }),
        ),
        Outbound::ApprovalRequest(o) => Message::for_invocation(
            task_id,
            o.invocation_id,
            MessageBody::ApprovalRequest(ApprovalRequest {
                tool: o.tool,
                args: o.args,
                matched_rules: o.matched_rules,
            }),
        ),
        Outbound::PlanProposed(steps) => Message::new(task_id, MessageBody::PlanProposed(PlanProposed { steps })),
        Outbound::Update(event) => Message::new(task_id, MessageBody::TaskUpdate(TaskUpdate { event })),
    }
}

#[async_trait]
impl ExecutorChannel for WsChannel {
    async fn send(&mut self, msg: Outbound) -> Result<(), ChannelClosed> {
        let msg = outbound_message(&self.task_id, msg);
        self.out.send(msg).await.map_err(|_| ChannelClosed)
    }

    async fn recv(&mut self) -> Inbound {
        self.inbox.recv().await.unwrap_or_else(|| Inbound::Disconnected {
            reason: "executor session closed".into(),
        })
    }

    fn try_recv(&mut self) -> Option<Inbound> {
        self.inbox.try_recv().ok()
    }
}

fn decode_error_code(e: &DecodeError) -> &'static str {
    match e {
        DecodeError::MalformedFrame(_) => "MalformedFrame",
        DecodeError::UnknownKind(_) => "UnknownKind",
        DecodeError::SchemaViolation { .. } => "SchemaViolation",
    }
}

/// Answers an executor-sent decision with an Error frame when the engine refuses it.
fn reply_to_executor(task_id: &TaskId, out: &mpsc::Sender<Message>) -> oneshot::Sender<Result<(), EngineError>> {
    let (tx, rx) = oneshot::channel::<Result<(), EngineError>>();
    let (task_id, out) = (task_id.clone(), out.clone());
    tokio::spawn(async move {
        if let Ok(Err(e)) = rx.await {
            let _ = out.send(Message::error(task_id, "ActionIllegalInState", e.to_string())).await;
        }
    });
    tx
}

fn route(task_id: &TaskId, msg: Message, out: &mpsc::Sender<Message>) -> Result<Option<Inbound>, Message> {
    if &msg.task_id != task_id {
        return Err(Message::error(
            task_id.clone(),
            "TaskMismatch",
            format!("this session serves task {task_id}, not {}", msg.task_id),
        ));
    }
    let inv = msg.invocation_id;
    Ok(match msg.body {
        MessageBody::BootstrapResult(b) => Some(Inbound::Bootstrap(b.metadata)),
        MessageBody::ToolResult(r) => Some(Inbound::ToolResult {
            invocation_id: inv.expect("decoder requires invocation_id"),
            outcome: r.outcome,
        }),
        MessageBody::ApprovalDecision(d) => Some(Inbound::Approval {
            invocation_id: inv,
            decision: d.decision,
            reason: d.reason,
            reply: Some(reply_to_executor(task_id, out)),
        }),
        MessageBody::PlanDecision(d) => Some(Inbound::PlanDecision {
            decision: d.decision,
            modified_steps: d.modified_steps,
            reason: None,
            reply: Some(reply_to_executor(task_id, out)),
        }),
        MessageBody::Ping(h) => {
            let _ = out.try_send(Message::new(task_id.clone(), MessageBody::Pong(h)));
            None
        }
        MessageBody::Pong(_) | MessageBody::Hello(_) => None,
        other => {
            return Err(Message::error(
                task_id.clone(),
                "UnexpectedKind",
                format!("executors do not send {}", other.kind()),
            ))
        }
    })
}

async fn read_frames(
    task_id: TaskId,
    mut stream: futures::stream::SplitStream<WebSocket>,
    live: Live,
    out: mpsc::Sender<Message>,
) {
    while let Some(frame) = stream.next().await {
        let text = match frame {
            Ok(WsMessage::Text(t)) => t,
            Ok(WsMessage::Close(_)) | Err(_) => break,
            Ok(WsMessage::Binary(_)) => {
                let _ = out
                    .send(Message::error(task_id.clone(), "MalformedFrame", "binary frames are not part of the protocol"))
                    .await;
                continue;
            }
            Ok(_) => {
                live.touch();
                continue;
            }
        };
        live.touch();
        match decode_message(text.as_bytes()) {
            Ok(msg) => match route(&task_id, msg, &out) {
                Ok(Some(inbound)) => {
                    if live.inbox.send(inbound).is_err() {
                        break;
                    }
                }
                Ok(None) => {}
                Err(reply) => {
                    let _ = out.send(reply).await;
                }
            },
            Err(e) => {
                let _ = out.send(Message::error(task_id.clone(), decode_error_code(&e), e.to_string())).await;
            }
        }
    }
    let _ = live.inbox.send(Inbound::Disconnected {
        reason: "executor connection closed".into(),
    });
}

/// Runs one attached executor session until the task ends or the executor goes away.
pub(crate) async fn serve_executor(hub: Arc<Hub>, claim: Claim, socket: WebSocket) {
    let task_id = claim.slot.task_id.clone();
    let (mut sink, stream) = socket.split();
    let started = match hub.start(&claim) {
        Ok(s) => s,
        Err(e) => {
            let msg = Message::error(task_id, "AttachRejected", e.to_string());
            let _ = sink.send(WsMessage::Text(encode_line(&msg).into())).await;
            let _ = sink.send(WsMessage::Close(None)).await;
            return;
        }
    };
    let Claim { slot, live, inbox } = claim;
    let (out_tx, mut out_rx) = mpsc::channel::<Message>(256);

    let ping_every = hub.cfg.ping_interval;
    let close = live.close.clone();
    let ping_task = task_id.clone();
    let writer = tokio::spawn(async move {
        let mut ticker = tokio::time::interval(ping_every);
        ticker.tick().await;
        let mut nonce = 0u64;
        loop {
            let msg = tokio::select! {
                biased;
                m = out_rx.recv() => match m {
                    Some(m) => m,
                    None => break,
                },
                _ = close.notified() => break,
                _ = ticker.tick() => {
                    nonce += 1;
                    Message::new(ping_task.clone(), MessageBody::Ping(Heartbeat { nonce }))
                }
            };
            if sink.send(WsMessage::Text(encode_line(&msg).into())).await.is_err() {
                break;
            }
        }
        // drain what the loop already queued, then close
        while let Ok(m) = out_rx.try_recv() {
            if sink.send(WsMessage::Text(encode_line(&m).into())).await.is_err() {
                break;
            }
        }
        let _ = sink.send(WsMessage::Close(None)).await;
        let _ = sink.close().await;
    });
    let reader = tokio::spawn(read_frames(task_id.clone(), stream, live.clone(), out_tx.clone()));

    let mut chan = WsChannel {
        task_id: task_id.clone(),
        out: out_tx,
        inbox,
    };
    let (mut engine, mut driver) = (started.engine, started.driver);
    match run_loop(&mut engine, driver.as_mut(), &mut chan, started.directive).await {
        Ok(LoopExit::Terminal(status)) => tracing::info!(%task_id, ?status, "task finished"),
        Ok(LoopExit::Parked) => tracing::info!(%task_id, "executor gone; task parked"),
        Err(e) => tracing::error!(%task_id, "task loop stopped: {e}"),
    }
    engine.take_events();
    hub.finish(&slot, live.generation, engine, driver);
    live.close.notify_one();
    reader.abort();
    drop(chan);
    let _ = writer.await;
}
