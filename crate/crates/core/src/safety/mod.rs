//! Guardrails: capability classification, cross-tool policy evaluation,
//! policy files and gap linting.

mod classify;
mod lexer;
mod lint;
mod policy;

pub use classify::{
    analyze_shell, classify_shell, classify_tool_call, Capability, CapabilitySet, ClassifyError,
    ShellAnalysis, ShellSegment,
};
pub use lint::{lint_policy, shell_reachable, GapWarning};
pub use policy::{
    evaluate, load_policy, parse_policy, MatchedRule, PolicyConfig, PolicyDecision, PolicyError,
    Rule, RuleSource, Verdict,
};
