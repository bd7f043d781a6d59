//! Executor-side tool implementations. These run on the developer's machine;
//! policy and approval checks happen before a call is dispatched here.

mod bootstrap;
mod fs;
mod shell;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_probe, project_tree, BootstrapLimits};
pub use fs::{
    content_hash, count_occurrences, normalize_path, tool_edit, tool_read, EditSpec, TRUNCATION_MARKER,
};
pub use shell::{tool_shell, ShellSpec};

use crate::protocol::{ToolArgs, ToolErrorKind, ToolOutcome, TOOL_EDIT, TOOL_READ, TOOL_SHELL};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolConfig {
    pub read_cap: usize,
    pub output_cap: usize,
    pub default_timeout_seconds: u64,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            read_cap: 1 << 20,
            output_cap: 200 * 1024,
            default_timeout_seconds: 120,
        }
    }
}

/// A working directory plus tool limits: everything needed to run a dispatched call.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    pub tools: ToolConfig,
    pub limits: BootstrapLimits,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            tools: ToolConfig::default(),
            limits: BootstrapLimits::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub async fn bootstrap(&self) -> crate::protocol::BootstrapMetadata {
        bootstrap_probe(&self.root, &self.limits).await
    }

    /// Runs one dispatched tool call.
    pub async fn execute(&self, tool: &str, args: &ToolArgs, expected_hash: Option<&str>) -> ToolOutcome {
        let text = |name: &str| args.get(name).and_then(|v| v.as_str());
        match tool {
            TOOL_READ => match text("path") {
                Some(path) => tool_read(&self.root, path, self.tools.read_cap),
                None => invalid("read(path: string)"),
            },
            TOOL_EDIT => match (text("file_name"), text("old_string"), text("new_string")) {
                (Some(f), Some(o), Some(n)) => {
                    let root = self.root.clone();
                    let spec = EditSpec::new(f, o, n);
                    let expected = expected_hash.map(String::from);
                    tokio::task::spawn_blocking(move || tool_edit(&root, &spec, expected.as_deref()))
                        .await
                        .unwrap_or_else(|e| ToolOutcome::error(ToolErrorKind::WriteFailed, format!("edit task failed: {e}")))
                }
                _ => invalid("edit(file_name: string, old_string: string, new_string: string)"),
            },
            TOOL_SHELL => {
                let timeout = match args.get("timeout_seconds") {
                    None => self.tools.default_timeout_seconds,
                    Some(v) => match v.as_u64() {
                        Some(t) if t > 0 => t,
                        _ => return invalid("shell(command: string, timeout_seconds?: positive integer)"),
                    },
                };
                match text("command") {
                    Some(cmd) => tool_shell(&self.root, &ShellSpec::new(cmd, timeout), self.tools.output_cap).await,
                    None => invalid("shell(command: string, timeout_seconds?: integer)"),
                }
            }
            other => ToolOutcome::error(
                ToolErrorKind::UnknownTool,
                format!("unknown tool `{other}`; available tools are read, edit and shell"),
            ),
        }
    }
}

fn invalid(shape: &str) -> ToolOutcome {
    ToolOutcome::error(ToolErrorKind::InvalidArguments, format!("invalid arguments; expected {shape}"))
}
