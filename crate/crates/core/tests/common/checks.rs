//! Property checks shared by the core property tests and the acceptance suite.
//! Each check takes one generated case and fails with a readable reason.

use std::cell::Cell;
use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use super::gen::{apply_mutation, session_policy, Mutation, PolicyAddition, SessionSpec};
use super::{deps_with, Kill, Session};
use tiller_core::maestro::{MaestroConfig, Mode, TaskStatus};
use tiller_core::model::{Role, Script};
use tiller_core::protocol::{
    decode_message, decode_stream, encode_message, InvocationId, Manifest, Message, ToolCall, ToolErrorKind,
    ToolPayload, TOOL_READ,
};
use tiller_core::safety::{classify_tool_call, evaluate, PolicyConfig, Rule, Verdict};
use tiller_core::state::{replay, EventBody, EventKind, TimelineEvent};
use tiller_core::tools::{content_hash, tool_edit, tool_read, EditSpec};

/// Runs `cases` generated cases through `check`; Ok carries the number run.
pub fn run_cases<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<u32, String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        max_shrink_iters: 256,
        ..Config::default()
    });
    runner
        .run(&strategy, check)
        .map(|_| cases)
        .map_err(|e| e.to_string())
}

// ---- protocol ----

pub fn round_trip(msg: Message) -> Result<(), TestCaseError> {
    let line = encode_message(&msg);
    prop_assert_eq!(line.iter().filter(|b| **b == b'\n').count(), 1, "one newline");
    prop_assert_eq!(*line.last().unwrap(), b'\n');
    let back = decode_message(&line).map_err(|e| TestCaseError::fail(format!("{e}: {}", String::from_utf8_lossy(&line))))?;
    prop_assert_eq!(&back, &msg);
    prop_assert_eq!(encode_message(&back), line, "re-encoding is bit-exact");
    Ok(())
}

pub fn frame_isolation(msgs: Vec<Message>) -> Result<(), TestCaseError> {
    let stream: Vec<u8> = msgs.iter().flat_map(encode_message).collect();
    let decoded: Vec<Message> = decode_stream(&stream)
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(decoded, msgs);
    Ok(())
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzTally {
    pub typed_errors: u32,
    /// Mutations that happened to produce another valid message (for example a changed letter in a string).
    pub still_valid: u32,
}

/// Decodes a mutated line. Must not panic; a successful decode must itself be a valid, re-encodable message.
pub fn mutated_line(msg: &Message, m: &Mutation, tally: &Cell<FuzzTally>) -> Result<(), TestCaseError> {
    let line = apply_mutation(&encode_message(msg), m);
    let result = catch_unwind(AssertUnwindSafe(|| decode_message(&line)))
        .map_err(|_| TestCaseError::fail(format!("decoder panicked on {:?}", String::from_utf8_lossy(&line))))?;
    let mut t = tally.get();
    match result {
        Err(_) => t.typed_errors += 1,
        Ok(decoded) => {
            let again = decode_message(&encode_message(&decoded));
            prop_assert_eq!(again.as_ref().ok(), Some(&decoded), "decoded mutant must re-encode");
            t.still_valid += 1;
        }
    }
    tally.set(t);
    Ok(())
}

// ---- safety ----

pub fn cross_tool(policy: &PolicyConfig, call: &ToolCall, mode: Mode) -> Result<(), TestCaseError> {
    let manifest = Manifest::builtin();
    let d = evaluate(policy, &manifest, call, mode);
    let caps = classify_tool_call(call).unwrap_or_default();
    for (cap, rule) in &policy.capability_rules {
        if *rule == Rule::Deny && caps.contains(cap) {
            prop_assert_eq!(d.verdict, Verdict::Deny, "{} denied but {:?} -> {:?}", cap, call, d.verdict);
        }
    }
    if d.verdict != Verdict::Allow {
        prop_assert!(!d.decisive_rules().is_empty(), "no audit trail for {:?}", d);
    }
    let destructive = manifest.get(&call.tool).is_some_and(|e| e.destructive);
    if mode == Mode::Approval && destructive {
        prop_assert_ne!(d.verdict, Verdict::Allow, "mode floor broken");
    }
    if call.tool == TOOL_READ {
        let auto = evaluate(policy, &manifest, call, Mode::Autonomous);
        prop_assert_eq!(d.verdict, auto.verdict, "mode escalated a read");
    }
    Ok(())
}

pub fn monotone(policy: &PolicyConfig, add: &PolicyAddition, call: &ToolCall, mode: Mode) -> Result<(), TestCaseError> {
    let manifest = Manifest::builtin();
    let before = evaluate(policy, &manifest, call, mode).verdict;
    let stronger = add.apply(policy);
    let after = evaluate(&stronger, &manifest, call, mode).verdict;
    prop_assert!(after >= before, "{:?} weakened {:?} -> {:?} for {:?}", add, before, after, call);
    Ok(())
}

// ---- edit tool ----

fn nonoverlapping_count(hay: &[u8], needle: &[u8]) -> usize {
    let (mut i, mut n) = (0, 0);
    while i + needle.len() <= hay.len() {
        if &hay[i..i + needle.len()] == needle {
            n += 1;
            i += needle.len();
        } else {
            i += 1;
        }
    }
    n
}

fn as_text(b: &[u8]) -> String {
    String::from_utf8(b.to_vec()).expect("generators produce UTF-8")
}

/// A unique needle is replaced in place and nothing else changes.
pub fn edit_locality(dir: &Path, file: &[u8], needle: &[u8], new: &[u8]) -> Result<(), TestCaseError> {
    let path = dir.join("f.txt");
    std::fs::write(&path, file).unwrap();
    let at = file.windows(needle.len()).position(|w| w == needle).expect("needle present");
    let out = tool_edit(dir, &EditSpec::new("f.txt", as_text(needle), as_text(new)), None);
    prop_assert!(out.is_ok(), "{:?}", out);
    let after = std::fs::read(&path).unwrap();
    prop_assert_eq!(&after[..at], &file[..at]);
    prop_assert_eq!(&after[at..at + new.len()], new);
    prop_assert_eq!(&after[at + new.len()..], &file[at + needle.len()..]);
    let read = tool_read(dir, "f.txt", usize::MAX);
    let Some(ToolPayload::Read { hash, .. }) = read.payload() else {
        return Err(TestCaseError::fail(format!("{read:?}")));
    };
    prop_assert_eq!(hash, &content_hash(&after), "read after edit sees the predicted content");
    Ok(())
}

/// The error kind follows the occurrence count, and errors leave the file alone.
pub fn edit_outcome_matches_count(dir: &Path, file: &[u8], needle: &[u8]) -> Result<(), TestCaseError> {
    let path = dir.join("g.txt");
    std::fs::write(&path, file).unwrap();
    let count = nonoverlapping_count(file, needle);
    let out = tool_edit(dir, &EditSpec::new("g.txt", as_text(needle), "Z"), None);
    let after = std::fs::read(&path).unwrap();
    match count {
        0 => prop_assert_eq!(out.error_kind(), Some(&ToolErrorKind::OldStringNotFound)),
        1 => prop_assert!(out.is_ok(), "{:?}", out),
        n => prop_assert_eq!(out.error_kind(), Some(&ToolErrorKind::AmbiguousMatch { occurrences: n })),
    }
    if !out.is_ok() {
        prop_assert_eq!(after, file, "failed edit changed the file");
    }
    Ok(())
}

// ---- sessions ----

pub fn session_workdir() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("a.txt"), "hello world\n").unwrap();
    std::fs::write(d.path().join("b.txt"), "alpha beta\n").unwrap();
    d
}

pub fn invocation_of(body: &EventBody) -> Option<&InvocationId> {
    match body {
        EventBody::ModelResponse { invocation_id, .. } => invocation_id.as_ref(),
        EventBody::ApprovalRequested { invocation_id, .. }
        | EventBody::ApprovalGranted { invocation_id }
        | EventBody::ApprovalDenied { invocation_id, .. }
        | EventBody::PolicyDenied { invocation_id, .. }
        | EventBody::ToolDispatched { invocation_id, .. }
        | EventBody::ToolResult { invocation_id, .. }
        | EventBody::ReadBeforeEditWarning { invocation_id, .. }
        | EventBody::DuplicateResultIgnored { invocation_id } => Some(invocation_id),
        _ => None,
    }
}

/// seq is exactly 1..N and the only terminal event is the last one.
pub fn timeline_shape(events: &[TimelineEvent]) -> Result<(), TestCaseError> {
    for (i, e) in events.iter().enumerate() {
        prop_assert_eq!(e.seq, i as u64 + 1, "seq gap or duplicate");
    }
    let terminals: Vec<usize> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind().is_terminal())
        .map(|(i, _)| i)
        .collect();
    prop_assert_eq!(terminals, vec![events.len() - 1], "exactly one terminal event, last");
    Ok(())
}

/// No dispatch before the plan is accepted.
pub fn planning_gate(events: &[TimelineEvent]) -> Result<(), TestCaseError> {
    let accepted = events
        .iter()
        .position(|e| matches!(e.kind(), EventKind::PlanApproved | EventKind::PlanModified));
    if let Some(first) = events.iter().position(|e| e.kind() == EventKind::ToolDispatched) {
        prop_assert!(accepted.is_some_and(|a| a < first), "ToolDispatched at {} before plan acceptance", first);
    }
    Ok(())
}

/// Every destructive dispatch was granted right before; reads never ask.
pub fn approval_gate(events: &[TimelineEvent]) -> Result<(), TestCaseError> {
    let mut per_inv: HashMap<&InvocationId, Vec<&TimelineEvent>> = HashMap::new();
    for e in events {
        if let Some(id) = invocation_of(&e.body) {
            per_inv.entry(id).or_default().push(e);
        }
    }
    for evs in per_inv.values() {
        let tool = evs.iter().find_map(|e| match &e.body {
            EventBody::ModelResponse {
                turn: tiller_core::model::ModelTurn::ToolCall { call },
                ..
            } => Some(call.tool.as_str()),
            _ => None,
        });
        for (i, e) in evs.iter().enumerate() {
            if e.kind() != EventKind::ToolDispatched {
                continue;
            }
            if tool == Some(TOOL_READ) {
                prop_assert!(!evs.iter().any(|e| e.kind() == EventKind::ApprovalRequested), "read asked for approval");
            } else {
                prop_assert!(
                    i > 0 && evs[i - 1].kind() == EventKind::ApprovalGranted,
                    "{:?} dispatched without a grant",
                    tool
                );
            }
        }
    }
    Ok(())
}

/// Each invocation contributes at most one ToolResult, and every dispatched one exactly one.
pub fn single_results(events: &[TimelineEvent], completed: bool) -> Result<(), TestCaseError> {
    let mut results: HashMap<&InvocationId, usize> = HashMap::new();
    let mut dispatched = Vec::new();
    for e in events {
        match &e.body {
            EventBody::ToolResult { invocation_id, .. } => *results.entry(invocation_id).or_default() += 1,
            EventBody::ToolDispatched { invocation_id, .. } => dispatched.push(invocation_id),
            _ => {}
        }
    }
    for (id, n) in &results {
        prop_assert!(*n <= 1, "{} has {} results", id, n);
    }
    if completed {
        for id in dispatched {
            prop_assert_eq!(results.get(id).copied(), Some(1), "{} dispatched without a result", id);
        }
    }
    Ok(())
}

pub struct SessionRun {
    pub session: Session,
    pub status: TaskStatus,
    pub timeline: Vec<TimelineEvent>,
}

pub fn run_spec(rt: &tokio::runtime::Runtime, dir: &Path, spec: &SessionSpec, kills: Vec<Kill>) -> Result<SessionRun, TestCaseError> {
    let deps = deps_with(
        session_policy(spec.policy),
        MaestroConfig {
            max_iterations: 12,
            ..Default::default()
        },
    );
    let (s, engine) = Session::with_script(dir, deps, Script::from_turns(spec.turns.clone()), spec.mode, spec.planning);
    let mut s = s.answers(spec.answers.clone());
    let engine = rt.block_on(s.run(engine, VecDeque::from(kills)));
    let status = engine.status();
    prop_assert!(status.is_terminal());
    let timeline = s.timeline();
    let replayed = replay(&timeline)
        .map_err(|e| TestCaseError::fail(format!("replay: {e}")))?
        .expect("non-empty timeline");
    prop_assert_eq!(&replayed, engine.record(), "replay differs from the live record");
    let mut seen = std::collections::HashSet::new();
    for id in &s.executor.executions {
        prop_assert!(seen.insert(id.clone()), "{} executed twice", id);
    }
    Ok(SessionRun {
        session: s,
        status,
        timeline,
    })
}

/// Replay equivalence, timeline shape and the gates, for one random session.
pub fn session_properties(rt: &tokio::runtime::Runtime, spec: SessionSpec) -> Result<(), TestCaseError> {
    let dir = session_workdir();
    let run = run_spec(rt, dir.path(), &spec, Vec::new())?;
    timeline_shape(&run.timeline)?;
    single_results(&run.timeline, run.status == TaskStatus::Completed)?;
    if spec.planning {
        planning_gate(&run.timeline)?;
        plan_modify_reaches_model(&run)?;
    }
    if spec.mode == Mode::Approval {
        approval_gate(&run.timeline)?;
    }
    Ok(())
}

/// After PlanModified, the next payload's last turn lists the modified steps, not the originals.
pub fn plan_modify_reaches_model(run: &SessionRun) -> Result<(), TestCaseError> {
    let Some(steps) = run.timeline.iter().find_map(|e| match &e.body {
        EventBody::PlanModified { steps } => Some(steps.clone()),
        _ => None,
    }) else {
        return Ok(());
    };
    let payloads = run.session.payloads.lock().unwrap();
    let seen = payloads.iter().find(|p| {
        p.last_entry()
            .is_some_and(|t| t.role == Role::User && t.content.starts_with("Plan modified"))
    });
    let Some(p) = seen else {
        // no model call happened after the decision only if the task ended there
        prop_assert!(run.status.is_terminal());
        return Ok(());
    };
    let last = &p.last_entry().unwrap().content;
    for s in &steps {
        prop_assert!(last.contains(s.as_str()), "modified step {:?} missing from {:?}", s, last);
    }
    prop_assert!(!last.contains("orig "), "original steps leaked: {:?}", last);
    prop_assert!(!p.planning_requested, "plan already accepted");
    Ok(())
}
