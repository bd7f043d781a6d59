use serde::{Deserialize, Serialize};

/// What the executor reports back for one invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case", deny_unknown_fields)]
pub enum ToolOutcome {
    Ok {
        payload: ToolPayload,
    },
    Error {
        error_kind: ToolErrorKind,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        partial: Option<ToolPayload>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "snake_case", deny_unknown_fields)]
pub enum ToolPayload {
    Read {
        path: String,
        content: String,
        hash: String,
        truncated: bool,
    },
    Edit {
        path: String,
        summary: String,
        /// Digest of the file before the replacement, used for read-set freshness.
        pre_hash: String,
        post_hash: String,
    },
    Shell {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exit_code: Option<i32>,
        stdout: String,
        stderr: String,
        stdout_truncated: bool,
        stderr_truncated: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    NotFound,
    NotAFile,
    PermissionDenied,
    ReadFailed,
    FileNotFound,
    OldStringNotFound,
    AmbiguousMatch { occurrences: usize },
    StaleRead,
    WriteFailed,
    SpawnFailed,
    TimedOut,
    InvalidArguments,
    UnknownTool,
}

impl ToolOutcome {
    pub fn ok(payload: ToolPayload) -> Self {
        ToolOutcome::Ok { payload }
    }

    pub fn error(kind: ToolErrorKind, message: impl Into<String>) -> Self {
        ToolOutcome::Error {
            error_kind: kind,
            message: message.into(),
            partial: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ToolOutcome::Ok { .. })
    }

    pub fn payload(&self) -> Option<&ToolPayload> {
        match self {
            ToolOutcome::Ok { payload } => Some(payload),
            ToolOutcome::Error { partial, .. } => partial.as_ref(),
        }
    }

    pub fn error_kind(&self) -> Option<&ToolErrorKind> {
        match self {
            ToolOutcome::Ok { .. } => None,
            ToolOutcome::Error { error_kind, .. } => Some(error_kind),
        }
    }

    /// Text fed back to the model as the tool turn.
    pub fn render_for_model(&self) -> String {
        match self {
            ToolOutcome::Ok { payload } => render_payload(payload),
            ToolOutcome::Error { message, partial, .. } => match partial {
                Some(p) => format!("error: {message}\n{}", render_payload(p)),
                None => format!("error: {message}"),
            },
        }
    }
}

fn render_payload(payload: &ToolPayload) -> String {
    match payload {
        ToolPayload::Read { path, content, truncated, .. } => {
            let note = if *truncated { " (truncated)" } else { "" };
            format!("contents of {path}{note}:\n{content}")
        }
        ToolPayload::Edit { summary, .. } => summary.clone(),
        ToolPayload::Shell {
            exit_code,
            stdout,
            stderr,
            ..
        } => {
            let code = exit_code.map_or_else(|| "none".to_string(), |c| c.to_string());
            format!("exit_code: {code}\nstdout:\n{stdout}\nstderr:\n{stderr}")
        }
    }
}
