use std::fmt;

use serde::{Deserialize, Serialize};

use super::classify::{classify_shell, classify_tool_call, Capability, CapabilitySet};
use super::policy::{PolicyConfig, Rule};
use crate::protocol::{ToolCall, ToolArgs, TOOL_SHELL};

/// A capability blocked on one channel but still reachable on another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapWarning {
    pub denied_tool: String,
    pub capability: Capability,
    pub bypass: String,
}

impl fmt::Display for GapWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} reachable via {}: tool.{} = deny does not cover it; add capability.{} = deny",
            self.capability, self.bypass, self.denied_tool, self.capability
        )
    }
}

/// One representative command per row of the classification table.
const TABLE_PROBES: &[&str] = &[
    "cat f",
    "touch f",
    "echo x > f",
    "rm f",
    "git push --force",
    "git push",
    "curl -o f https://example.invalid",
    "cargo build",
    "frobnicate",
];

/// Capabilities a shell call can produce according to the classification table.
pub fn shell_reachable() -> CapabilitySet {
    TABLE_PROBES.iter().flat_map(|c| classify_shell(c)).collect()
}

/// Reports every tool-level deny that the shell tool can route around.
pub fn lint_policy(policy: &PolicyConfig) -> Vec<GapWarning> {
    if policy.tool_rules.get(TOOL_SHELL) == Some(&Rule::Deny) {
        return Vec::new();
    }
    let reachable = shell_reachable();
    let mut warnings = Vec::new();
    for (tool, rule) in &policy.tool_rules {
        if *rule != Rule::Deny || tool == TOOL_SHELL {
            continue;
        }
        let Ok(caps) = classify_tool_call(&ToolCall::new(tool.clone(), ToolArgs::new())) else {
            continue;
        };
        for cap in caps {
            let denied = policy.capability_rules.get(&cap) == Some(&Rule::Deny);
            if !denied && reachable.contains(&cap) {
                warnings.push(GapWarning {
                    denied_tool: tool.clone(),
                    capability: cap,
                    bypass: TOOL_SHELL.to_string(),
                });
            }
        }
    }
    warnings
}
