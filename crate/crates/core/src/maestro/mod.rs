//! The orchestration engine: per-task state machine, the agentic loop, stop
//! criteria, and routing of approvals and plans. Sole writer of timelines.

mod engine;
mod record;
mod run;

pub use engine::{
    ApprovalOrder, Directive, DispatchOrder, EngineDeps, EngineError, MaestroConfig, ReadBeforeEditMode,
    TaskEngine,
};
pub use record::{
    approval_denied_text, plan_rejected_text, plan_text, ApplyError, FailureReason, Freshness, Mode,
    PendingInvocation, Plan, PlanDecisionState, TaskRecord, TaskStatus,
};
pub use run::{run_loop, ChannelClosed, ExecutorChannel, Inbound, LoopExit, Outbound, Reply};
