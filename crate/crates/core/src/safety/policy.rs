//! One policy evaluated over every tool channel.
//!
//! Rules attach to tools, to capabilities, to blocklisted command patterns,
//! and to unclassifiable commands. All matching rules are collected and the
//! strictest wins (deny > require_approval > allow). In approval mode,
//! destructive tools are floored at require_approval.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::classify::{analyze_shell, classify_tool_call, Capability, CapabilitySet};
use crate::maestro::Mode;
use crate::protocol::{Manifest, ToolCall, TOOL_SHELL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Allow,
    RequireApproval,
    Deny,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Allow => "allow",
            Rule::RequireApproval => "require_approval",
            Rule::Deny => "deny",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "allow" => Ok(Rule::Allow),
            "require_approval" => Ok(Rule::RequireApproval),
            "deny" => Ok(Rule::Deny),
            _ => Err(()),
        }
    }
}

/// The outcome of evaluation; ordered like [`Rule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Allow,
    RequireApproval,
    Deny,
}

impl From<Rule> for Verdict {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Allow => Verdict::Allow,
            Rule::RequireApproval => Verdict::RequireApproval,
            Rule::Deny => Verdict::Deny,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub tool_rules: BTreeMap<String, Rule>,
    pub capability_rules: BTreeMap<Capability, Rule>,
    pub command_blocklist: Vec<String>,
    pub unknown_command_rule: Rule,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            tool_rules: BTreeMap::new(),
            capability_rules: BTreeMap::new(),
            command_blocklist: Vec::new(),
            unknown_command_rule: Rule::RequireApproval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum RuleSource {
    Tool { tool: String },
    Capability { capability: Capability },
    Blocklist { pattern: String, segment: usize, text: String },
    UnknownCommand,
    Mode,
}

/// One rule that matched during evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedRule {
    #[serde(flatten)]
    pub source: RuleSource,
    pub rule: Rule,
}

impl fmt::Display for MatchedRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            RuleSource::Tool { tool } => write!(f, "tool.{tool} = {}", self.rule),
            RuleSource::Capability { capability } => write!(f, "capability.{capability} = {}", self.rule),
            RuleSource::Blocklist { pattern, segment, text } => {
                write!(f, "block {pattern} (segment {segment}: {text})")
            }
            RuleSource::UnknownCommand => write!(f, "unknown_command = {}", self.rule),
            RuleSource::Mode => write!(f, "mode: approval"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub verdict: Verdict,
    pub capabilities: CapabilitySet,
    /// Every rule that matched, in evaluation order.
    pub matched_rules: Vec<MatchedRule>,
}

impl PolicyDecision {
    /// Rules at the decisive level; non-empty for Deny and RequireApproval.
    pub fn decisive_rules(&self) -> Vec<&MatchedRule> {
        self.matched_rules
            .iter()
            .filter(|m| Verdict::from(m.rule) == self.verdict)
            .collect()
    }

    pub fn audit_lines(&self) -> Vec<String> {
        self.matched_rules.iter().map(ToString::to_string).collect()
    }

    /// Tool-error text shown to the model when the call is denied.
    pub fn denial_message(&self) -> String {
        let reasons: Vec<String> = self
            .decisive_rules()
            .iter()
            .map(|m| match &m.source {
                RuleSource::Capability { capability } => capability.to_string(),
                RuleSource::Tool { tool } => format!("tool {tool} is blocked"),
                RuleSource::Blocklist { pattern, .. } => format!("command matches blocked pattern `{pattern}`"),
                RuleSource::UnknownCommand => "unclassifiable command".to_string(),
                RuleSource::Mode => "approval mode".to_string(),
            })
            .collect();
        format!(
            "denied by policy: {}. Do not retry this action through another tool; choose a different approach.",
            reasons.join(", ")
        )
    }
}

fn blocklist_hit(pattern: &str, text: &str) -> bool {
    match glob::Pattern::new(pattern) {
        Ok(p) => p.matches(text),
        // an invalid glob only matches itself literally
        Err(_) => pattern == text,
    }
}

/// Evaluates a call under `policy` in the given oversight mode. Never fails.
pub fn evaluate(policy: &PolicyConfig, manifest: &Manifest, call: &ToolCall, mode: Mode) -> PolicyDecision {
    let mut matched = Vec::new();
    if let Some(rule) = policy.tool_rules.get(&call.tool) {
        matched.push(MatchedRule {
            source: RuleSource::Tool { tool: call.tool.clone() },
            rule: *rule,
        });
    }

    let (capabilities, segments) = if call.tool == TOOL_SHELL {
        let analysis = analyze_shell(call.str_arg("command").unwrap_or(""));
        (analysis.capabilities, analysis.segments)
    } else {
        // unknown tools cannot be reasoned about; treat like an unclassifiable command
        let caps = classify_tool_call(call)
            .unwrap_or_else(|_| [Capability::Exec, Capability::Unknown].into());
        (caps, Vec::new())
    };

    for cap in &capabilities {
        if let Some(rule) = policy.capability_rules.get(cap) {
            matched.push(MatchedRule {
                source: RuleSource::Capability { capability: *cap },
                rule: *rule,
            });
        }
    }

    for (i, seg) in segments.iter().enumerate() {
        for pattern in &policy.command_blocklist {
            if blocklist_hit(pattern, &seg.text) || blocklist_hit(pattern, &seg.effective_text) {
                matched.push(MatchedRule {
                    source: RuleSource::Blocklist {
                        pattern: pattern.clone(),
                        segment: i + 1,
                        text: seg.text.clone(),
                    },
                    rule: Rule::Deny,
                });
            }
        }
    }

    if capabilities.contains(&Capability::Unknown) {
        matched.push(MatchedRule {
            source: RuleSource::UnknownCommand,
            rule: policy.unknown_command_rule,
        });
    }

    // read-only tools are never escalated by the mode alone
    let destructive = manifest.get(&call.tool).map_or(true, |e| e.destructive);
    if mode == Mode::Approval && destructive {
        matched.push(MatchedRule {
            source: RuleSource::Mode,
            rule: Rule::RequireApproval,
        });
    }

    let verdict = matched
        .iter()
        .map(|m| Verdict::from(m.rule))
        .max()
        .unwrap_or(Verdict::Allow);
    PolicyDecision {
        verdict,
        capabilities,
        matched_rules: matched,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("policy line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("policy line {line}: unknown rule value `{value}` (expected allow, require_approval or deny)")]
    UnknownRuleValue { line: usize, value: String },
    #[error("cannot read policy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyConfig, PolicyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_policy(&text, &Manifest::builtin())
}

/// Parses the line-oriented policy format:
///
/// ```text
/// tool.shell = require_approval
/// capability.FsDelete = deny
/// unknown_command = deny
/// block git push*
/// ```
pub fn parse_policy(text: &str, manifest: &Manifest) -> Result<PolicyConfig, PolicyError> {
    let mut policy = PolicyConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| PolicyError::Parse { line, message };
        if let Some(pattern) = trimmed.strip_prefix("block ") {
            let pattern = pattern.trim();
            if pattern.is_empty() {
                return Err(parse_err("`block` needs a pattern".into()));
            }
            policy.command_blocklist.push(pattern.to_string());
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `key = value` or `block <pattern>`, got `{trimmed}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let rule = Rule::from_str(value).map_err(|_| PolicyError::UnknownRuleValue {
            line,
            value: value.to_string(),
        })?;
        if let Some(tool) = key.strip_prefix("tool.") {
            if manifest.get(tool).is_none() {
                return Err(parse_err(format!("unknown tool `{tool}`")));
            }
            policy.tool_rules.insert(tool.to_string(), rule);
        } else if let Some(class) = key.strip_prefix("capability.") {
            let cap = Capability::from_str(class).map_err(|_| parse_err(format!("unknown capability `{class}`")))?;
            policy.capability_rules.insert(cap, rule);
        } else if key == "unknown_command" {
            policy.unknown_command_rule = rule;
        } else {
            return Err(parse_err(format!("unknown key `{key}`")));
        }
    }
    Ok(policy)
}
