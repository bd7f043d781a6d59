use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::protocol::{InvocationId, ToolCall};

/// Reasoning depth knob forwarded to the model API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkingEffort {
    Low,
    #[default]
    Medium,
    High,
}

impl ThinkingEffort {
    pub const ALL: [ThinkingEffort; 3] = [ThinkingEffort::Low, ThinkingEffort::Medium, ThinkingEffort::High];

    pub fn as_str(self) -> &'static str {
        match self {
            ThinkingEffort::Low => "low",
            ThinkingEffort::Medium => "medium",
            ThinkingEffort::High => "high",
        }
    }
}

impl fmt::Display for ThinkingEffort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThinkingEffort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ThinkingEffort::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown effort `{s}` (expected low, medium or high)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Model,
    Tool,
}

/// One entry of the conversation history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    /// Set on model tool-call turns and on the tool turns answering them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invocation_id: Option<InvocationId>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_error: bool,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            invocation_id: None,
            is_error: false,
        }
    }

    pub fn model(content: impl Into<String>, invocation_id: Option<InvocationId>) -> Self {
        Self {
            role: Role::Model,
            content: content.into(),
            invocation_id,
            is_error: false,
        }
    }

    pub fn tool(content: impl Into<String>, invocation_id: InvocationId) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            invocation_id: Some(invocation_id),
            is_error: false,
        }
    }

    pub fn tool_error(content: impl Into<String>, invocation_id: InvocationId) -> Self {
        Self {
            is_error: true,
            ..Self::tool(content, invocation_id)
        }
    }
}

/// The model's move for one iteration of the loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelTurn {
    FinalText { text: String },
    ToolCall { call: ToolCall },
    PlanProposal { steps: Vec<String> },
}

impl ModelTurn {
    pub fn final_text(text: impl Into<String>) -> Self {
        ModelTurn::FinalText { text: text.into() }
    }

    pub fn tool_call(call: ToolCall) -> Self {
        ModelTurn::ToolCall { call }
    }

    pub fn plan<S: Into<String>>(steps: impl IntoIterator<Item = S>) -> Self {
        ModelTurn::PlanProposal {
            steps: steps.into_iter().map(Into::into).collect(),
        }
    }

    /// History text for this turn; uses the same surface syntax as script files.
    pub fn render(&self) -> String {
        match self {
            ModelTurn::FinalText { text } => format!("final {text}"),
            ModelTurn::ToolCall { call } => {
                let args = serde_json::to_string(&call.args).expect("args serialize");
                match &call.rationale {
                    Some(r) => format!("call {} {args} -- {r}", call.tool),
                    None => format!("call {} {args}", call.tool),
                }
            }
            ModelTurn::PlanProposal { steps } => format!("plan {}", steps.join("|")),
        }
    }
}
