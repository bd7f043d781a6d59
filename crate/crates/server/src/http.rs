use std::convert::Infallible;
use std::str::FromStr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::WebSocketUpgrade;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use tiller_core::maestro::{EngineError, Mode};
use tiller_core::model::ThinkingEffort;
use tiller_core::protocol::{InvocationId, TaskId};
use tiller_core::state::{EventLog, TimelineEvent};

use crate::config::PolicyLookupError;
use crate::executor::serve_executor;
use crate::hub::{Action, ActionError, AttachError, CreateError, CreateTask, Hub};

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn not_found(task_id: &TaskId) -> Self {
        Self::new(StatusCode::NOT_FOUND, "TaskNotFound", format!("unknown task {task_id}"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::TaskNotFound(id) => ApiError::not_found(&id),
            EngineError::InvalidState { .. } | EngineError::UnknownInvocation { .. } | EngineError::TaskTerminal(_) => {
                ApiError::new(StatusCode::CONFLICT, "ActionIllegalInState", e.to_string())
            }
            EngineError::ModifiedWithoutSteps | EngineError::EmptyPrompt => ApiError::bad_request(e.to_string()),
            other => ApiError::internal(other),
        }
    }
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/tasks", post(create_task))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/events", get(get_events))
        .route("/tasks/{id}/actions", post(post_action))
        .route("/tasks/{id}/stream", get(stream_events))
        .route("/attach", get(attach))
        .layer(middleware::from_fn_with_state(hub.clone(), require_token))
        .with_state(hub)
}

async fn require_token(State(hub): State<Arc<Hub>>, req: Request, next: Next) -> Response {
    if let Some(token) = &hub.cfg.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    prompt: String,
    mode: Option<String>,
    planning: Option<bool>,
    effort: Option<String>,
    policy: Option<String>,
}

async fn create_task(
    State(hub): State<Arc<Hub>>,
    body: Result<Json<CreateBody>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if body.prompt.trim().is_empty() {
        return Err(ApiError::bad_request("prompt must not be empty"));
    }
    let mode = match body.mode.as_deref() {
        None => Mode::Approval,
        Some(m) => Mode::from_str(m).map_err(ApiError::bad_request)?,
    };
    let effort = match body.effort.as_deref() {
        None => ThinkingEffort::Medium,
        Some(e) => ThinkingEffort::from_str(e).map_err(ApiError::bad_request)?,
    };
    let req = CreateTask {
        prompt: body.prompt,
        mode,
        planning: body.planning.unwrap_or(false),
        effort,
        policy: body.policy,
    };
    let (task_id, warnings) = hub.create_task(req).map_err(|e| match e {
        CreateError::Policy(p @ (PolicyLookupError::BadName(_) | PolicyLookupError::Unknown(_))) => {
            ApiError::bad_request(p.to_string())
        }
        CreateError::Policy(p) => ApiError::internal(p),
        CreateError::Engine(e) => e.into(),
    })?;
    let warnings: Vec<String> = warnings.iter().map(ToString::to_string).collect();
    Ok((
        StatusCode::CREATED,
        Json(json!({ "task_id": task_id, "policy_warnings": warnings })),
    ))
}

async fn get_task(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let task_id = TaskId::new(id);
    let record = hub.task_record(&task_id)?.ok_or_else(|| ApiError::not_found(&task_id))?;
    let pending = record.pending_invocation.as_ref().map(|p| {
        json!({
            "invocation_id": p.invocation_id,
            "tool": p.call.tool,
            "args": p.call.args,
            "matched_rules": p.audit,
        })
    });
    Ok(Json(json!({
        "task_id": record.task_id,
        "status": record.status,
        "mode": record.mode,
        "planning": record.planning,
        "effort": record.effort,
        "iteration_count": record.iteration_count,
        "final_text": record.final_text,
        "failure": record.failure.as_ref().map(ToString::to_string),
        "pending_invocation": pending,
        "plan": record.plan,
        "last_seq": record.last_seq,
        "executor_attached": hub.executor_attached(&task_id),
    })))
}

#[derive(Deserialize)]
struct FromSeq {
    from_seq: Option<u64>,
}

fn known(hub: &Hub, task_id: &TaskId) -> Result<(), ApiError> {
    hub.slot(task_id).map(drop).ok_or_else(|| ApiError::not_found(task_id))
}

async fn get_events(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Query(q): Query<FromSeq>,
) -> Result<Json<Value>, ApiError> {
    let task_id = TaskId::new(id);
    known(&hub, &task_id)?;
    let from_seq = q.from_seq.unwrap_or(1).max(1);
    let events = hub.log().read_timeline(&task_id, from_seq).map_err(ApiError::internal)?;
    Ok(Json(json!({ "task_id": task_id, "from_seq": from_seq, "events": events })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionBody {
    action: String,
    invocation_id: Option<String>,
    reason: Option<String>,
    steps: Option<Vec<String>>,
}

pub const ACTIONS: [&str; 6] = ["approve", "deny", "plan_approve", "plan_modify", "plan_reject", "cancel"];

async fn post_action(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    body: Result<Json<ActionBody>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let task_id = TaskId::new(id);
    known(&hub, &task_id)?;
    let Json(b) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let invocation_id = b.invocation_id.map(InvocationId::new);
    let action = match b.action.as_str() {
        "approve" => Action::Approve {
            invocation_id,
            reason: b.reason,
        },
        "deny" => Action::Deny {
            invocation_id,
            reason: b.reason,
        },
        "plan_approve" => Action::PlanApprove,
        "plan_modify" => Action::PlanModify {
            steps: b.steps.unwrap_or_default(),
        },
        "plan_reject" => Action::PlanReject { reason: b.reason },
        "cancel" => Action::Cancel { reason: b.reason },
        other => {
            return Err(ApiError::bad_request(format!(
                "unknown action `{other}`; legal actions are {}",
                ACTIONS.join(", ")
            )))
        }
    };
    hub.act(&task_id, action).await.map_err(|e| match e {
        ActionError::TaskNotFound(id) => ApiError::not_found(&id),
        ActionError::Engine(e) => e.into(),
        ActionError::Busy => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "Busy", e.to_string()),
    })?;
    let status = hub.task_record(&task_id)?.map(|r| r.status);
    Ok(Json(json!({ "task_id": task_id, "status": status })))
}

fn sse_event(e: &TimelineEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.kind().to_string())
        .data(serde_json::to_string(e).expect("events serialize"))
}

async fn stream_events(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Query(q): Query<FromSeq>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let task_id = TaskId::new(id);
    known(&hub, &task_id)?;
    // subscribe before the first read so no append slips between them
    let heads = hub.log().subscribe(&task_id);
    let next = q.from_seq.unwrap_or(1).max(1);
    struct Cursor {
        hub: Arc<Hub>,
        task_id: TaskId,
        heads: tokio::sync::watch::Receiver<u64>,
        next: u64,
        buffered: std::collections::VecDeque<TimelineEvent>,
        done: bool,
    }
    let cursor = Cursor {
        hub,
        task_id,
        heads,
        next,
        buffered: Default::default(),
        done: false,
    };
    let stream = futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(e) = c.buffered.pop_front() {
                c.next = e.seq + 1;
                if e.kind().is_terminal() {
                    c.done = true;
                    c.buffered.clear();
                }
                return Some((Ok(sse_event(&e)), c));
            }
            if c.done {
                return None;
            }
            match c.hub.log().read_timeline(&c.task_id, c.next) {
                Ok(events) if !events.is_empty() => c.buffered.extend(events),
                Ok(_) => {
                    if c.heads.changed().await.is_err() {
                        return None;
                    }
                }
                Err(e) => {
                    tracing::warn!(task_id = %c.task_id, "stream read failed: {e}");
                    return None;
                }
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
struct AttachQuery {
    task_id: String,
}

async fn attach(
    State(hub): State<Arc<Hub>>,
    Query(q): Query<AttachQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let task_id = TaskId::new(q.task_id);
    let claim = hub.claim(&task_id).map_err(|e| match e {
        AttachError::TaskNotFound(id) => ApiError::not_found(&id),
        AttachError::ExecutorAlreadyAttached(_) => ApiError::new(StatusCode::CONFLICT, "ExecutorAlreadyAttached", e.to_string()),
        AttachError::TaskTerminal(_) => ApiError::new(StatusCode::CONFLICT, "TaskTerminal", e.to_string()),
        AttachError::Resume(_) => ApiError::internal(e),
    })?;
    Ok(ws.on_upgrade(move |socket| serve_executor(hub, claim, socket)))
}
