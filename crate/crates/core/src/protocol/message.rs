//! Message envelope exchanged between orchestrator and executor, and its
//! newline-delimited wire encoding.
//!
//! Every frame is a single line holding one JSON object with exactly the
//! top-level fields `kind`, `task_id`, `invocation_id` (only on the four
//! invocation-scoped kinds) and `body`. Control characters inside strings are
//! escaped by the JSON encoder, so a frame never spans lines.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ids::{InvocationId, TaskId};
use super::manifest::ToolArgs;
use super::outcome::ToolOutcome;
use crate::state::TimelineEvent;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Hello,
    BootstrapRequest,
    BootstrapResult,
    ToolDispatch,
    ToolResult,
    ApprovalRequest,
    ApprovalDecision,
    PlanProposed,
    PlanDecision,
    TaskUpdate,
    Error,
    Ping,
    Pong,
}

impl MessageKind {
    pub const ALL: [MessageKind; 13] = [
        MessageKind::Hello,
        MessageKind::BootstrapRequest,
        MessageKind::BootstrapResult,
        MessageKind::ToolDispatch,
        MessageKind::ToolResult,
        MessageKind::ApprovalRequest,
        MessageKind::ApprovalDecision,
        MessageKind::PlanProposed,
        MessageKind::PlanDecision,
        MessageKind::TaskUpdate,
        MessageKind::Error,
        MessageKind::Ping,
        MessageKind::Pong,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Hello => "Hello",
            MessageKind::BootstrapRequest => "BootstrapRequest",
            MessageKind::BootstrapResult => "BootstrapResult",
            MessageKind::ToolDispatch => "ToolDispatch",
            MessageKind::ToolResult => "ToolResult",
            MessageKind::ApprovalRequest => "ApprovalRequest",
            MessageKind::ApprovalDecision => "ApprovalDecision",
            MessageKind::PlanProposed => "PlanProposed",
            MessageKind::PlanDecision => "PlanDecision",
            MessageKind::TaskUpdate => "TaskUpdate",
            MessageKind::Error => "Error",
            MessageKind::Ping => "Ping",
            MessageKind::Pong => "Pong",
        }
    }

    /// Kinds that must carry an `invocation_id`; all others must not.
    pub fn carries_invocation(self) -> bool {
        matches!(
            self,
            MessageKind::ToolDispatch
                | MessageKind::ToolResult
                | MessageKind::ApprovalRequest
                | MessageKind::ApprovalDecision
        )
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or(())
    }
}

/// Environment facts collected by the executor before the first model turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapMetadata {
    pub os_name: String,
    pub working_directory: String,
    pub recent_git_history: Vec<String>,
    pub project_structure: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub version: u32,
    pub client: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapRequest {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapResult {
    pub metadata: BootstrapMetadata,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolDispatch {
    pub tool: String,
    pub args: ToolArgs,
    /// Set when a parked task re-sends an invocation after reconnecting.
    pub redispatch: bool,
    /// Read-set digest the file must still match (hard read-before-edit mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolResult {
    pub outcome: ToolOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApprovalRequest {
    pub tool: String,
    pub args: ToolArgs,
    /// Audit lines of the policy rules that led to this request.
    pub matched_rules: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalVerdict {
    Approve,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApprovalDecision {
    pub decision: ApprovalVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanProposed {
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanVerdict {
    Approved,
    Rejected,
    Modified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDecision {
    pub decision: PlanVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modified_steps: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskUpdate {
    pub event: TimelineEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heartbeat {
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageBody {
    Hello(Hello),
    BootstrapRequest(BootstrapRequest),
    BootstrapResult(BootstrapResult),
    ToolDispatch(ToolDispatch),
    ToolResult(ToolResult),
    ApprovalRequest(ApprovalRequest),
    ApprovalDecision(ApprovalDecision),
    PlanProposed(PlanProposed),
    PlanDecision(PlanDecision),
    TaskUpdate(TaskUpdate),
    Error(ErrorBody),
    Ping(Heartbeat),
    Pong(Heartbeat),
}

impl MessageBody {
    pub fn kind(&self) -> MessageKind {
        match self {
            MessageBody::Hello(_) => MessageKind::Hello,
            MessageBody::BootstrapRequest(_) => MessageKind::BootstrapRequest,
            MessageBody::BootstrapResult(_) => MessageKind::BootstrapResult,
            MessageBody::ToolDispatch(_) => MessageKind::ToolDispatch,
            MessageBody::ToolResult(_) => MessageKind::ToolResult,
            MessageBody::ApprovalRequest(_) => MessageKind::ApprovalRequest,
            MessageBody::ApprovalDecision(_) => MessageKind::ApprovalDecision,
            MessageBody::PlanProposed(_) => MessageKind::PlanProposed,
            MessageBody::PlanDecision(_) => MessageKind::PlanDecision,
            MessageBody::TaskUpdate(_) => MessageKind::TaskUpdate,
            MessageBody::Error(_) => MessageKind::Error,
            MessageBody::Ping(_) => MessageKind::Ping,
            MessageBody::Pong(_) => MessageKind::Pong,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            MessageBody::Hello(b) => serde_json::to_value(b),
            MessageBody::BootstrapRequest(b) => serde_json::to_value(b),
            MessageBody::BootstrapResult(b) => serde_json::to_value(b),
            MessageBody::ToolDispatch(b) => serde_json::to_value(b),
            MessageBody::ToolResult(b) => serde_json::to_value(b),
            MessageBody::ApprovalRequest(b) => serde_json::to_value(b),
            MessageBody::ApprovalDecision(b) => serde_json::to_value(b),
            MessageBody::PlanProposed(b) => serde_json::to_value(b),
            MessageBody::PlanDecision(b) => serde_json::to_value(b),
            MessageBody::TaskUpdate(b) => serde_json::to_value(b),
            MessageBody::Error(b) => serde_json::to_value(b),
            MessageBody::Ping(b) => serde_json::to_value(b),
            MessageBody::Pong(b) => serde_json::to_value(b),
        };
        v.expect("message bodies always serialize")
    }

    fn from_value(kind: MessageKind, body: Value) -> Result<Self, DecodeError> {
        Ok(match kind {
            MessageKind::Hello => MessageBody::Hello(body_from(body)?),
            MessageKind::BootstrapRequest => MessageBody::BootstrapRequest(body_from(body)?),
            MessageKind::BootstrapResult => MessageBody::BootstrapResult(body_from(body)?),
            MessageKind::ToolDispatch => MessageBody::ToolDispatch(body_from(body)?),
            MessageKind::ToolResult => MessageBody::ToolResult(body_from(body)?),
            MessageKind::ApprovalRequest => MessageBody::ApprovalRequest(body_from(body)?),
            MessageKind::ApprovalDecision => MessageBody::ApprovalDecision(body_from(body)?),
            MessageKind::PlanProposed => MessageBody::PlanProposed(body_from(body)?),
            MessageKind::PlanDecision => MessageBody::PlanDecision(body_from(body)?),
            MessageKind::TaskUpdate => MessageBody::TaskUpdate(body_from(body)?),
            MessageKind::Error => MessageBody::Error(body_from(body)?),
            MessageKind::Ping => MessageBody::Ping(body_from(body)?),
            MessageKind::Pong => MessageBody::Pong(body_from(body)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub task_id: TaskId,
    pub invocation_id: Option<InvocationId>,
    pub body: MessageBody,
}

impl Message {
    pub fn new(task_id: TaskId, body: MessageBody) -> Self {
        Self {
            task_id,
            invocation_id: None,
            body,
        }
    }

    pub fn for_invocation(task_id: TaskId, invocation_id: InvocationId, body: MessageBody) -> Self {
        Self {
            task_id,
            invocation_id: Some(invocation_id),
            body,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    pub fn error(task_id: TaskId, code: &str, message: impl Into<String>) -> Self {
        Self::new(
            task_id,
            MessageBody::Error(ErrorBody {
                code: code.to_string(),
                message: message.into(),
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
    #[error("schema violation at `{field}`: {detail}")]
    SchemaViolation { field: String, detail: String },
}

impl DecodeError {
    fn schema(field: impl Into<String>, detail: impl Into<String>) -> Self {
        DecodeError::SchemaViolation {
            field: field.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Serialize)]
struct WireOut<'a> {
    kind: &'a str,
    task_id: &'a TaskId,
    #[serde(skip_serializing_if = "Option::is_none")]
    invocation_id: Option<&'a InvocationId>,
    body: Value,
}

/// Encodes one message as a single newline-terminated line.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    let mut out = encode_line(msg).into_bytes();
    out.push(b'\n');
    out
}

/// Like [`encode_message`] but without the trailing newline, for transports
/// that frame messages themselves.
pub fn encode_line(msg: &Message) -> String {
    let wire = WireOut {
        kind: msg.kind().as_str(),
        task_id: &msg.task_id,
        invocation_id: msg.invocation_id.as_ref(),
        body: msg.body.to_value(),
    };
    serde_json::to_string(&wire).expect("envelope always serializes")
}

const TOP_LEVEL: [&str; 4] = ["kind", "task_id", "invocation_id", "body"];

/// Decodes one frame. A single trailing newline is accepted and ignored.
pub fn decode_message(bytes: &[u8]) -> Result<Message, DecodeError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| DecodeError::MalformedFrame(format!("invalid UTF-8: {e}")))?;
    let line = text.strip_suffix('\n').unwrap_or(text);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.contains('\n') {
        return Err(DecodeError::MalformedFrame("frame spans more than one line".into()));
    }
    let value: Value =
        serde_json::from_str(line).map_err(|e| DecodeError::MalformedFrame(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(DecodeError::MalformedFrame("frame is not an object".into()));
    };
    if let Some(extra) = obj.keys().find(|k| !TOP_LEVEL.contains(&k.as_str())) {
        return Err(DecodeError::schema(extra.clone(), "unknown top-level field"));
    }

    let kind = match obj.remove("kind") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(DecodeError::schema("kind", "must be a string")),
        None => return Err(DecodeError::schema("kind", "missing")),
    };
    let kind = MessageKind::from_str(&kind).map_err(|_| DecodeError::UnknownKind(kind))?;

    let task_id = match obj.remove("task_id") {
        Some(Value::String(s)) if !s.is_empty() => TaskId::new(s),
        Some(Value::String(_)) => return Err(DecodeError::schema("task_id", "must not be empty")),
        Some(_) => return Err(DecodeError::schema("task_id", "must be a string")),
        None => return Err(DecodeError::schema("task_id", "missing")),
    };

    let invocation_id = match (obj.remove("invocation_id"), kind.carries_invocation()) {
        (Some(Value::String(s)), true) if !s.is_empty() => Some(InvocationId::new(s)),
        (Some(_), true) => {
            return Err(DecodeError::schema("invocation_id", "must be a non-empty string"))
        }
        (None, true) => return Err(DecodeError::schema("invocation_id", "missing")),
        (Some(_), false) => {
            return Err(DecodeError::schema(
                "invocation_id",
                format!("not allowed on {kind}"),
            ))
        }
        (None, false) => None,
    };

    let body = match obj.remove("body") {
        Some(b @ Value::Object(_)) => b,
        Some(_) => return Err(DecodeError::schema("body", "must be an object")),
        None => return Err(DecodeError::schema("body", "missing")),
    };
    let body = MessageBody::from_value(kind, body)?;
    Ok(Message {
        task_id,
        invocation_id,
        body,
    })
}

/// Splits a byte stream on newlines and decodes each non-empty line.
pub fn decode_stream(bytes: &[u8]) -> Vec<Result<Message, DecodeError>> {
    bytes
        .split(|b| *b == b'\n')
        .filter(|l| !l.is_empty())
        .map(decode_message)
        .collect()
}

fn body_from<T: DeserializeOwned>(body: Value) -> Result<T, DecodeError> {
    serde_path_to_error::deserialize(body).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner().to_string();
        // serde reports missing/unknown fields at the parent path with the name in backticks
        let named = inner
            .split('`')
            .nth(1)
            .filter(|_| inner.starts_with("missing field") || inner.starts_with("unknown field"));
        let field = match (path.as_str(), named) {
            (".", Some(n)) => format!("body.{n}"),
            (p, Some(n)) => format!("body.{p}.{n}"),
            (".", None) => "body".to_string(),
            (p, None) => format!("body.{p}"),
        };
        DecodeError::schema(field, inner)
    })
}
