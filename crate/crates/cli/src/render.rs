//! Terminal text for events, approval prompts and plans.

use serde_json::Value;
use tiller_core::protocol::{ApprovalRequest, InvocationId};
use tiller_core::state::TimelineEvent;

/// `seq kind summary`, one line per event.
pub fn event_line(event: &TimelineEvent) -> String {
    let summary = event.body.summary().replace('\n', "\\n");
    if summary.is_empty() {
        format!("{} {}", event.seq, event.kind())
    } else {
        format!("{} {} {}", event.seq, event.kind(), summary)
    }
}

fn render_value(out: &mut String, name: &str, value: &Value) {
    match value {
        Value::String(s) if s.contains('\n') || s.trim() != s || s.is_empty() => {
            // multi-line or whitespace-edged text goes out verbatim between markers
            out.push_str(&format!("  {name}: ({} bytes)\n", s.len()));
            out.push_str("  ---8<---\n");
            out.push_str(s);
            if !s.ends_with('\n') {
                out.push('\n');
            }
            out.push_str("  --->8---\n");
        }
        Value::String(s) => out.push_str(&format!("  {name}: {s}\n")),
        other => out.push_str(&format!("  {name}: {other}\n")),
    }
}

pub fn render_approval(invocation_id: Option<&InvocationId>, req: &ApprovalRequest) -> String {
    let mut out = match invocation_id {
        Some(id) => format!("approval required: {} [{id}]\n", req.tool),
        None => format!("approval required: {}\n", req.tool),
    };
    for (name, value) in &req.args {
        render_value(&mut out, name, value);
    }
    for rule in &req.matched_rules {
        out.push_str(&format!("  matched: {rule}\n"));
    }
    out
}

pub fn render_plan(steps: &[String]) -> String {
    let mut out = String::from("proposed plan:\n");
    for (i, step) in steps.iter().enumerate() {
        out.push_str(&format!("  {}. {step}\n", i + 1));
    }
    out
}
