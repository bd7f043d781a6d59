//! Declarative tool manifest shown to the model, and argument validation
//! against it.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TOOL_READ: &str = "read";
pub const TOOL_EDIT: &str = "edit";
pub const TOOL_SHELL: &str = "shell";

/// Arguments of a tool call, keyed by parameter name.
pub type ToolArgs = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Boolean,
}

impl ParamType {
    pub fn accepts(self, value: &Value) -> bool {
        match self {
            ParamType::String => value.is_string(),
            ParamType::Integer => value.is_i64() || value.is_u64(),
            ParamType::Boolean => value.is_boolean(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Boolean => "boolean",
        }
    }
}

fn json_type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolParam {
    pub name: String,
    #[serde(rename = "type")]
    pub param_type: ParamType,
    pub required: bool,
    pub description: String,
}

impl ToolParam {
    fn new(name: &str, param_type: ParamType, required: bool, description: &str) -> Self {
        Self {
            name: name.to_string(),
            param_type,
            required,
            description: description.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolManifestEntry {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ToolParam>,
    pub destructive: bool,
}

impl ToolManifestEntry {
    pub fn param(&self, name: &str) -> Option<&ToolParam> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("tool name must not be empty")]
    EmptyName,
    #[error("duplicate tool name `{0}`")]
    DuplicateName(String),
    #[error("required parameter `{param}` of tool `{tool}` has no description")]
    UndocumentedParam { tool: String, param: String },
}

/// The ordered list of tools offered to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    entries: Vec<ToolManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ToolManifestEntry>) -> Result<Self, ManifestError> {
        let mut seen = HashSet::new();
        for entry in &entries {
            if entry.name.is_empty() {
                return Err(ManifestError::EmptyName);
            }
            if !seen.insert(entry.name.as_str()) {
                return Err(ManifestError::DuplicateName(entry.name.clone()));
            }
            if let Some(p) = entry
                .parameters
                .iter()
                .find(|p| p.required && p.description.trim().is_empty())
            {
                return Err(ManifestError::UndocumentedParam {
                    tool: entry.name.clone(),
                    param: p.name.clone(),
                });
            }
        }
        Ok(Self { entries })
    }

    /// The three built-in tools: `read`, `edit` and `shell`.
    pub fn builtin() -> Self {
        use ParamType::*;
        let read = ToolManifestEntry {
            name: TOOL_READ.into(),
            description: "Read the full current contents of a file. Always read a file before \
                          editing it so the edit is based on what is actually on disk. Large \
                          files are truncated and the result says so."
                .into(),
            parameters: vec![ToolParam::new(
                "path",
                String,
                true,
                "Path of the file to read, relative to the working directory.",
            )],
            destructive: false,
        };
        let edit = ToolManifestEntry {
            name: TOOL_EDIT.into(),
            description: "Replace one exact occurrence of old_string with new_string in an \
                          existing file. old_string must appear exactly once; include enough \
                          surrounding lines to make it unique. The edit never creates files."
                .into(),
            parameters: vec![
                ToolParam::new("file_name", String, true, "Path of the file to edit."),
                ToolParam::new(
                    "old_string",
                    String,
                    true,
                    "Exact text currently in the file, copied from a fresh read.",
                ),
                ToolParam::new("new_string", String, true, "Replacement text."),
            ],
            destructive: true,
        };
        let shell = ToolManifestEntry {
            name: TOOL_SHELL.into(),
            description: "Run a shell command in the working directory and return its exit \
                          code, stdout and stderr. A non-zero exit code is reported, not \
                          treated as a failure. Commands are subject to the safety policy."
                .into(),
            parameters: vec![
                ToolParam::new("command", String, true, "The command line to execute."),
                ToolParam::new(
                    "timeout_seconds",
                    Integer,
                    false,
                    "Kill the command after this many seconds (default 120).",
                ),
            ],
            destructive: true,
        };
        Self::new(vec![read, edit, shell]).expect("builtin manifest is valid")
    }

    pub fn get(&self, name: &str) -> Option<&ToolManifestEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entries(&self) -> &[ToolManifestEntry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }
}

/// One problem with a tool call's arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum ArgViolation {
    Missing { param: String },
    WrongType { param: String, expected: ParamType, found: String },
    Undeclared { param: String },
}

impl fmt::Display for ArgViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgViolation::Missing { param } => write!(f, "missing required parameter `{param}`"),
            ArgViolation::WrongType { param, expected, found } => write!(
                f,
                "parameter `{param}` must be {}, got {found}",
                expected.as_str()
            ),
            ArgViolation::Undeclared { param } => write!(f, "undeclared parameter `{param}`"),
        }
    }
}

/// Checks `args` against the entry's closed schema and reports every violation at once.
pub fn validate_tool_args(entry: &ToolManifestEntry, args: &ToolArgs) -> Result<(), Vec<ArgViolation>> {
    let mut violations = Vec::new();
    for param in &entry.parameters {
        match args.get(&param.name) {
            None if param.required => violations.push(ArgViolation::Missing {
                param: param.name.clone(),
            }),
            None => {}
            Some(value) if !param.param_type.accepts(value) => {
                violations.push(ArgViolation::WrongType {
                    param: param.name.clone(),
                    expected: param.param_type,
                    found: json_type_name(value).to_string(),
                })
            }
            Some(_) => {}
        }
    }
    for name in args.keys() {
        if entry.param(name).is_none() {
            violations.push(ArgViolation::Undeclared { param: name.clone() });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Renders violations as a model-actionable error including the expected call shape.
pub fn describe_violations(entry: &ToolManifestEntry, violations: &[ArgViolation]) -> String {
    let problems: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
    let shape: Vec<String> = entry
        .parameters
        .iter()
        .map(|p| {
            let opt = if p.required { "" } else { "?" };
            format!("{}{opt}: {}", p.name, p.param_type.as_str())
        })
        .collect();
    format!(
        "invalid arguments for `{}`: {}. Expected {}({})",
        entry.name,
        problems.join("; "),
        entry.name,
        shape.join(", ")
    )
}

/// A tool invocation requested by the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolCall {
    pub tool: String,
    pub args: ToolArgs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>, args: ToolArgs) -> Self {
        Self {
            tool: tool.into(),
            args,
            rationale: None,
        }
    }

    pub fn str_arg(&self, name: &str) -> Option<&str> {
        self.args.get(name).and_then(Value::as_str)
    }

    pub fn int_arg(&self, name: &str) -> Option<i64> {
        self.args.get(name).and_then(Value::as_i64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn args(v: Value) -> ToolArgs {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn builtin_manifest_marks_destructive_tools() {
        let m = Manifest::builtin();
        assert!(!m.get(TOOL_READ).unwrap().destructive);
        assert!(m.get(TOOL_EDIT).unwrap().destructive);
        assert!(m.get(TOOL_SHELL).unwrap().destructive);
        assert_eq!(m.names().collect::<Vec<_>>(), ["read", "edit", "shell"]);
    }

    #[test]
    fn manifest_rejects_duplicates_and_undocumented_params() {
        let mut entry = Manifest::builtin().get("read").unwrap().clone();
        assert_eq!(
            Manifest::new(vec![entry.clone(), entry.clone()]),
            Err(ManifestError::DuplicateName("read".into()))
        );
        entry.parameters[0].description.clear();
        assert!(matches!(
            Manifest::new(vec![entry]),
            Err(ManifestError::UndocumentedParam { .. })
        ));
    }

    #[test]
    fn edit_exact_args_ok() {
        let m = Manifest::builtin();
        let a = args(json!({"file_name": "a", "old_string": "x", "new_string": "y"}));
        assert_eq!(validate_tool_args(m.get("edit").unwrap(), &a), Ok(()));
    }

    #[test]
    fn edit_reports_all_missing() {
        let m = Manifest::builtin();
        let a = args(json!({"file_name": "a"}));
        let v = validate_tool_args(m.get("edit").unwrap(), &a).unwrap_err();
        assert_eq!(
            v,
            vec![
                ArgViolation::Missing { param: "old_string".into() },
                ArgViolation::Missing { param: "new_string".into() },
            ]
        );
    }

    #[test]
    fn read_rejects_undeclared() {
        let m = Manifest::builtin();
        let a = args(json!({"path": "a", "recursive": true}));
        let v = validate_tool_args(m.get("read").unwrap(), &a).unwrap_err();
        assert_eq!(v, vec![ArgViolation::Undeclared { param: "recursive".into() }]);
    }

    #[test]
    fn shell_timeout_type_checked() {
        let m = Manifest::builtin();
        let entry = m.get("shell").unwrap();
        assert!(validate_tool_args(entry, &args(json!({"command": "ls", "timeout_seconds": 5}))).is_ok());
        let v = validate_tool_args(entry, &args(json!({"command": "ls", "timeout_seconds": "5"})))
            .unwrap_err();
        assert_eq!(
            v,
            vec![ArgViolation::WrongType {
                param: "timeout_seconds".into(),
                expected: ParamType::Integer,
                found: "string".into()
            }]
        );
        let msg = describe_violations(entry, &v);
        assert!(msg.contains("shell(command: string, timeout_seconds?: integer)"), "{msg}");
    }
}
