use async_trait::async_trait;
use tokio::sync::oneshot;

use super::engine::{ApprovalOrder, Directive, DispatchOrder, EngineError, TaskEngine};
use super::record::{FailureReason, TaskStatus};
use crate::model::{DriverError, ModelDriver};
use crate::protocol::{ApprovalVerdict, BootstrapMetadata, InvocationId, PlanVerdict, ToolOutcome};
use crate::state::TimelineEvent;

/// Answer channel for a user action; the loop reports whether it was legal.
pub type Reply = Option<oneshot::Sender<Result<(), EngineError>>>;

/// Everything the loop can be told, from the executor or from the user.
#[derive(Debug)]
pub enum Inbound {
    Bootstrap(BootstrapMetadata),
    ToolResult {
        invocation_id: InvocationId,
        outcome: ToolOutcome,
    },
    Approval {
        invocation_id: Option<InvocationId>,
        decision: ApprovalVerdict,
        reason: Option<String>,
        reply: Reply,
    },
    PlanDecision {
        decision: PlanVerdict,
        modified_steps: Option<Vec<String>>,
        reason: Option<String>,
        reply: Reply,
    },
    Cancel {
        reason: Option<String>,
        reply: Reply,
    },
    Disconnected {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    BootstrapRequest,
    Dispatch(DispatchOrder),
    ApprovalRequest(ApprovalOrder),
    PlanProposed(Vec<String>),
    Update(TimelineEvent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("executor channel closed")]
pub struct ChannelClosed;

/// The loop's view of the attached executor.
#[async_trait]
pub trait ExecutorChannel: Send {
    async fn send(&mut self, msg: Outbound) -> Result<(), ChannelClosed>;
    /// Waits for the next inbound item; a vanished executor yields `Disconnected`.
    async fn recv(&mut self) -> Inbound;
    fn try_recv(&mut self) -> Option<Inbound>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopExit {
    Terminal(TaskStatus),
    /// Executor lost; the task waits for a new one.
    Parked,
}

fn answer(reply: Reply, result: Result<(), EngineError>) {
    if let Some(tx) = reply {
        let _ = tx.send(result);
    }
}

/// Drives one attached executor session until the task ends or the executor goes away.
///
/// `next` is a directive to present first, as returned by [`TaskEngine::resume`].
pub async fn run_loop(
    engine: &mut TaskEngine,
    driver: &mut dyn ModelDriver,
    channel: &mut dyn ExecutorChannel,
    mut next: Option<Directive>,
) -> Result<LoopExit, EngineError> {
    loop {
        for event in engine.take_events() {
            if channel.send(Outbound::Update(event)).await.is_err() {
                return park(engine);
            }
        }
        if engine.status().is_terminal() {
            return Ok(LoopExit::Terminal(engine.status()));
        }
        if let Some(directive) = next.take() {
            let out = match directive {
                Directive::Dispatch(order) => Some(Outbound::Dispatch(order)),
                Directive::RequestApproval(order) => Some(Outbound::ApprovalRequest(order)),
                Directive::RequestPlanDecision(steps) => Some(Outbound::PlanProposed(steps)),
                Directive::Finalize(_) | Directive::FailTask(_) | Directive::Continue => None,
            };
            if let Some(out) = out {
                if channel.send(out).await.is_err() {
                    return park(engine);
                }
            }
            continue;
        }
        match engine.status() {
            TaskStatus::Created => {
                engine.begin_bootstrap()?;
                if channel.send(Outbound::BootstrapRequest).await.is_err() {
                    return park(engine);
                }
            }
            TaskStatus::AwaitingModel => {
                // settle anything that arrived meanwhile before spending a model call
                while let Some(msg) = channel.try_recv() {
                    if let Some(exit) = handle(engine, msg, &mut next)? {
                        return Ok(exit);
                    }
                }
                if engine.status() != TaskStatus::AwaitingModel || next.is_some() {
                    continue;
                }
                let payload = engine.payload()?;
                next = Some(match driver.next_turn(&payload).await {
                    Ok(turn) => engine.step(turn)?,
                    Err(DriverError::Unavailable(d)) => engine.fail(FailureReason::DriverUnavailable(d))?,
                    Err(DriverError::MalformedTurn(d)) => engine.fail(FailureReason::InvalidTurnForState(d))?,
                });
            }
            _ => {
                let msg = channel.recv().await;
                if let Some(exit) = handle(engine, msg, &mut next)? {
                    return Ok(exit);
                }
            }
        }
    }
}

fn park(engine: &mut TaskEngine) -> Result<LoopExit, EngineError> {
    engine.disconnect("executor channel closed")?;
    Ok(LoopExit::Parked)
}

fn handle(engine: &mut TaskEngine, msg: Inbound, next: &mut Option<Directive>) -> Result<Option<LoopExit>, EngineError> {
    match msg {
        Inbound::Bootstrap(metadata) => {
            if engine.status() == TaskStatus::Bootstrapping {
                engine.complete_bootstrap(metadata)?;
            }
        }
        Inbound::ToolResult { invocation_id, outcome } => match engine.handle_tool_result(&invocation_id, outcome) {
            Ok(d) => *next = Some(d),
            Err(EngineError::UnknownInvocation { .. } | EngineError::TaskTerminal(_)) => {}
            Err(e) => return Err(e),
        },
        Inbound::Approval {
            invocation_id,
            decision,
            reason,
            reply,
        } => match engine.handle_approval(invocation_id.as_ref(), decision, reason) {
            Ok(d) => {
                *next = Some(d);
                answer(reply, Ok(()));
            }
            Err(e) => answer(reply, Err(e)),
        },
        Inbound::PlanDecision {
            decision,
            modified_steps,
            reason,
            reply,
        } => match engine.handle_plan_decision(decision, modified_steps, reason) {
            Ok(d) => {
                *next = Some(d);
                answer(reply, Ok(()));
            }
            Err(e) => answer(reply, Err(e)),
        },
        Inbound::Cancel { reason, reply } => answer(reply, engine.cancel(reason)),
        Inbound::Disconnected { reason } => {
            engine.disconnect(&reason)?;
            return Ok(Some(LoopExit::Parked));
        }
    }
    Ok(None)
}
