//! Wire vocabulary between orchestrator and executor, and the tool manifest
//! format shown to the model.

mod ids;
mod manifest;
mod message;
mod outcome;

pub use ids::{InvocationId, TaskId};
pub use manifest::{
    describe_violations, validate_tool_args, ArgViolation, Manifest, ManifestError, ParamType,
    ToolArgs, ToolCall, ToolManifestEntry, ToolParam, TOOL_EDIT, TOOL_READ, TOOL_SHELL,
};
pub use message::{
    decode_message, decode_stream, encode_line, encode_message, ApprovalDecision,
    ApprovalRequest, ApprovalVerdict, BootstrapMetadata, BootstrapRequest, BootstrapResult,
    DecodeError, ErrorBody, Heartbeat, Hello, Message, MessageBody, MessageKind, PlanDecision,
    PlanProposed, PlanVerdict, TaskUpdate, ToolDispatch, ToolResult, PROTOCOL_VERSION,
};
pub use outcome::{ToolErrorKind, ToolOutcome, ToolPayload};
