//! Script files for the scripted driver.
//!
//! One entry per line:
//!
//! ```text
//! # comment
//! call read {"path":"a.txt"}
//! match=a.txt ; call edit {"file_name":"a.txt","old_string":"x","new_string":"y"} -- fix typo
//! plan inspect the failing test|fix the assertion|rerun the suite
//! final done
//! ```
//!
//! `final` text and `plan` steps may be given as JSON strings to embed
//! newlines or a literal `|`. Patterns cannot contain `;`.

use std::path::Path;

use serde_json::Value;

use super::turn::ModelTurn;
use crate::protocol::{ToolArgs, ToolCall};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    /// Substring that must occur in the most recent history entry.
    pub pattern: Option<String>,
    pub respond: ModelTurn,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_turns(turns: impl IntoIterator<Item = ModelTurn>) -> Self {
        Self {
            entries: turns
                .into_iter()
                .enumerate()
                .map(|(i, respond)| ScriptEntry {
                    pattern: None,
                    respond,
                    line: i + 1,
                })
                .collect(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("script line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn load_script(path: impl AsRef<Path>) -> Result<Script, ScriptError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_script(&text)
}

pub fn parse_script(text: &str) -> Result<Script, ScriptError> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| ScriptError::Parse { line, message };
        let (pattern, rest) = match trimmed.strip_prefix("match=") {
            Some(after) => {
                let (pat, rest) = after
                    .split_once(';')
                    .ok_or_else(|| err("`match=` prefix must end with `;`".into()))?;
                let pat = pat.trim();
                if pat.is_empty() {
                    return Err(err("empty match pattern".into()));
                }
                (Some(pat.to_string()), rest.trim())
            }
            None => (None, trimmed),
        };
        let (verb, arg) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        let arg = arg.trim();
        let respond = match verb {
            "final" => ModelTurn::final_text(text_arg(arg).map_err(err)?),
            "call" => parse_call(arg).map_err(err)?,
            "plan" => {
                let steps = plan_steps(arg).map_err(err)?;
                if steps.is_empty() {
                    return Err(err("plan needs at least one step".into()));
                }
                ModelTurn::PlanProposal { steps }
            }
            other => {
                return Err(err(format!(
                    "unknown entry `{other}` (expected final, call or plan)"
                )))
            }
        };
        entries.push(ScriptEntry {
            pattern,
            respond,
            line,
        });
    }
    Ok(Script { entries })
}

fn text_arg(arg: &str) -> Result<String, String> {
    if arg.starts_with('"') {
        serde_json::from_str::<String>(arg).map_err(|e| format!("bad quoted text: {e}"))
    } else {
        Ok(arg.to_string())
    }
}

fn plan_steps(arg: &str) -> Result<Vec<String>, String> {
    if arg.starts_with('[') {
        return serde_json::from_str::<Vec<String>>(arg).map_err(|e| format!("bad step list: {e}"));
    }
    Ok(arg
        .split('|')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect())
}

fn parse_call(arg: &str) -> Result<ModelTurn, String> {
    let (tool, rest) = arg.split_once(char::is_whitespace).unwrap_or((arg, ""));
    if tool.is_empty() {
        return Err("call needs a tool name".into());
    }
    let rest = rest.trim_start();
    let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<Value>();
    let args = match stream.next() {
        Some(Ok(Value::Object(map))) => map.into_iter().collect::<ToolArgs>(),
        Some(Ok(_)) => return Err("call arguments must be a JSON object".into()),
        Some(Err(e)) => return Err(format!("bad call arguments: {e}")),
        None => return Err("call needs an arguments object".into()),
    };
    let tail = rest[stream.byte_offset()..].trim();
    let rationale = match tail {
        "" => None,
        t => match t.strip_prefix("--") {
            Some(r) => Some(r.trim().to_string()),
            None => return Err(format!("unexpected text after arguments: `{t}`")),
        },
    };
    Ok(ModelTurn::ToolCall {
        call: ToolCall {
            tool: tool.to_string(),
            args,
            rationale,
        },
    })
}
