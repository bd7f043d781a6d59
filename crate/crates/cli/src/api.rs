//! HTTP side of the server: task creation, timelines, actions and the event stream.

use eventsource_stream::Eventsource;
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tiller_core::protocol::TaskId;
use tiller_core::state::TimelineEvent;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("cannot reach server: {0}")]
    Transport(String),
    #[error("server said {status}: {code}: {message}")]
    Status { status: u16, code: String, message: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl ApiError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ApiError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

impl From<reqwest::Error> for ApiError {
    fn from(e: reqwest::Error) -> Self {
        ApiError::Transport(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NewTask {
    pub prompt: String,
    pub mode: String,
    pub planning: bool,
    pub effort: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Created {
    pub task_id: TaskId,
    #[serde(default)]
    pub policy_warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct EventsPage {
    events: Vec<TimelineEvent>,
}

#[derive(Debug, Clone)]
pub struct Api {
    base: String,
    token: Option<String>,
    http: reqwest::Client,
}

impl Api {
    pub fn new(base: &str, token: Option<String>) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            token,
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    fn request(&self, method: reqwest::Method, path: &str) -> reqwest::RequestBuilder {
        let req = self.http.request(method, format!("{}{path}", self.base));
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    async fn checked(resp: reqwest::Response) -> Result<reqwest::Response, ApiError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        Err(ApiError::Status {
            status: status.as_u16(),
            code: body["error"].as_str().unwrap_or("Error").to_string(),
            message: body["message"].as_str().unwrap_or_default().to_string(),
        })
    }

    pub async fn create_task(&self, task: &NewTask) -> Result<Created, ApiError> {
        let resp = self.request(reqwest::Method::POST, "/tasks").json(task).send().await?;
        Ok(Self::checked(resp).await?.json().await?)
    }

    pub async fn task(&self, task_id: &TaskId) -> Result<Value, ApiError> {
        let resp = self.request(reqwest::Method::GET, &format!("/tasks/{task_id}")).send().await?;
        Ok(Self::checked(resp).await?.json().await?)
    }

    pub async fn events(&self, task_id: &TaskId, from_seq: u64) -> Result<Vec<TimelineEvent>, ApiError> {
        let resp = self
            .request(reqwest::Method::GET, &format!("/tasks/{task_id}/events?from_seq={from_seq}"))
            .send()
            .await?;
        let page: EventsPage = Self::checked(resp).await?.json().await?;
        Ok(page.events)
    }

    pub async fn action(&self, task_id: &TaskId, body: &Value) -> Result<Value, ApiError> {
        let resp = self
            .request(reqwest::Method::POST, &format!("/tasks/{task_id}/actions"))
            .json(body)
            .send()
            .await?;
        Ok(Self::checked(resp).await?.json().await?)
    }

    /// Follows the event stream from `from_seq`, calling `each` per event until the stream closes.
    pub async fn follow(
        &self,
        task_id: &TaskId,
        from_seq: u64,
        mut each: impl FnMut(&TimelineEvent),
    ) -> Result<Option<TimelineEvent>, ApiError> {
        let resp = self
            .request(reqwest::Method::GET, &format!("/tasks/{task_id}/stream?from_seq={from_seq}"))
            .send()
            .await?;
        let mut stream = Self::checked(resp).await?.bytes_stream().eventsource();
        let mut last = None;
        while let Some(item) = stream.next().await {
            let item = item.map_err(|e| ApiError::Transport(e.to_string()))?;
            let event: TimelineEvent =
                serde_json::from_str(&item.data).map_err(|e| ApiError::Protocol(e.to_string()))?;
            each(&event);
            let terminal = event.kind().is_terminal();
            last = Some(event);
            if terminal {
                break;
            }
        }
        Ok(last)
    }
}
