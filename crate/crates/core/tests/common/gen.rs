//! proptest strategies shared by the property suites.

use chrono::{DateTime, Utc};
use proptest::collection::{btree_map, vec};
use proptest::option;
use proptest::prelude::*;
use serde_json::Value;

use super::Answer;
use tiller_core::maestro::{FailureReason, Freshness, Mode};
use tiller_core::model::{ModelTurn, ThinkingEffort};
use tiller_core::protocol::*;
use tiller_core::safety::{Capability, MatchedRule, PolicyConfig, Rule, RuleSource};
use tiller_core::state::{EventBody, TimelineEvent};

/// Text with the characters that stress framing: newlines, quotes, control bytes, non-ASCII.
pub fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z ]{0,12}",
        "\\PC{0,16}",
        vec(prop_oneof![Just('\n'), Just('\r'), Just('"'), Just('\\'), Just('\u{0}'), Just('é'), Just('|'), any::<char>()], 0..8)
            .prop_map(|c| c.into_iter().collect()),
    ]
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_-]{0,10}"
}

pub fn arg_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        text().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        any::<u64>().prop_map(Value::from),
        any::<bool>().prop_map(Value::from),
    ]
}

pub fn args() -> impl Strategy<Value = ToolArgs> {
    btree_map(ident(), arg_value(), 0..4)
}

pub fn tool_call() -> impl Strategy<Value = ToolCall> {
    (prop_oneof![Just("read".to_string()), Just("edit".to_string()), Just("shell".to_string()), ident()], args(), option::of(text()))
        .prop_map(|(tool, args, rationale)| ToolCall { tool, args, rationale })
}

pub fn model_turn() -> impl Strategy<Value = ModelTurn> {
    prop_oneof![
        text().prop_map(ModelTurn::final_text),
        tool_call().prop_map(ModelTurn::tool_call),
        vec(text(), 1..4).prop_map(|steps| ModelTurn::PlanProposal { steps }),
    ]
}

pub fn payload() -> impl Strategy<Value = ToolPayload> {
    prop_oneof![
        (text(), text(), "[0-9a-f]{64}", any::<bool>()).prop_map(|(path, content, hash, truncated)| ToolPayload::Read {
            path,
            content,
            hash,
            truncated
        }),
        (text(), text(), "[0-9a-f]{64}", "[0-9a-f]{64}").prop_map(|(path, summary, pre_hash, post_hash)| {
            ToolPayload::Edit {
                path,
                summary,
                pre_hash,
                post_hash,
            }
        }),
        (option::of(any::<i32>()), text(), text(), any::<bool>(), any::<bool>()).prop_map(|(exit_code, stdout, stderr, a, b)| {
            ToolPayload::Shell {
                exit_code,
                stdout,
                stderr,
                stdout_truncated: a,
                stderr_truncated: b,
            }
        }),
    ]
}

pub fn error_kind() -> impl Strategy<Value = ToolErrorKind> {
    prop_oneof![
        Just(ToolErrorKind::NotFound),
        Just(ToolErrorKind::NotAFile),
        Just(ToolErrorKind::PermissionDenied),
        Just(ToolErrorKind::ReadFailed),
        Just(ToolErrorKind::FileNotFound),
        Just(ToolErrorKind::OldStringNotFound),
        (2usize..100).prop_map(|occurrences| ToolErrorKind::AmbiguousMatch { occurrences }),
        Just(ToolErrorKind::StaleRead),
        Just(ToolErrorKind::WriteFailed),
        Just(ToolErrorKind::SpawnFailed),
        Just(ToolErrorKind::TimedOut),
        Just(ToolErrorKind::InvalidArguments),
        Just(ToolErrorKind::UnknownTool),
    ]
}

pub fn outcome() -> impl Strategy<Value = ToolOutcome> {
    prop_oneof![
        payload().prop_map(ToolOutcome::ok),
        (error_kind(), text(), option::of(payload())).prop_map(|(error_kind, message, partial)| ToolOutcome::Error {
            error_kind,
            message,
            partial
        }),
    ]
}

fn capability() -> impl Strategy<Value = Capability> {
    proptest::sample::select(Capability::ALL.to_vec())
}

fn rule() -> impl Strategy<Value = Rule> {
    prop_oneof![Just(Rule::Allow), Just(Rule::RequireApproval), Just(Rule::Deny)]
}

fn matched_rule() -> impl Strategy<Value = MatchedRule> {
    let source = prop_oneof![
        ident().prop_map(|tool| RuleSource::Tool { tool }),
        capability().prop_map(|capability| RuleSource::Capability { capability }),
        (text(), 1usize..5, text()).prop_map(|(pattern, segment, text)| RuleSource::Blocklist { pattern, segment, text }),
        Just(RuleSource::UnknownCommand),
        Just(RuleSource::Mode),
    ];
    (source, rule()).prop_map(|(source, rule)| MatchedRule { source, rule })
}

fn inv() -> impl Strategy<Value = InvocationId> {
    prop_oneof![
        (1u64..1000).prop_map(InvocationId::nth),
        text().prop_filter("ids are non-empty", |s| !s.is_empty()).prop_map(InvocationId::new)
    ]
}

fn task_id() -> impl Strategy<Value = TaskId> {
    text().prop_filter("ids are non-empty", |s| !s.is_empty()).prop_map(TaskId::new)
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Approval), Just(Mode::Autonomous)]
}

fn effort() -> impl Strategy<Value = ThinkingEffort> {
    prop_oneof![Just(ThinkingEffort::Low), Just(ThinkingEffort::Medium), Just(ThinkingEffort::High)]
}

fn metadata() -> impl Strategy<Value = BootstrapMetadata> {
    (text(), text(), vec(text(), 0..3), vec(text(), 0..3)).prop_map(|(os_name, working_directory, recent_git_history, project_structure)| {
        BootstrapMetadata {
            os_name,
            working_directory,
            recent_git_history,
            project_structure,
        }
    })
}

fn failure() -> impl Strategy<Value = FailureReason> {
    prop_oneof![
        any::<u32>().prop_map(FailureReason::IterationLimit),
        text().prop_map(FailureReason::DriverUnavailable),
        text().prop_map(FailureReason::InvalidTurnForState),
        text().prop_map(FailureReason::Unrecoverable),
    ]
}

pub fn event_body() -> impl Strategy<Value = EventBody> {
    prop_oneof![
        (text(), mode(), any::<bool>(), effort()).prop_map(|(prompt, mode, planning, effort)| EventBody::TaskCreated {
            prompt,
            mode,
            planning,
            effort
        }),
        metadata().prop_map(|metadata| EventBody::BootstrapCompleted { metadata }),
        (model_turn(), option::of(inv()), option::of(text())).prop_map(|(turn, invocation_id, rejection)| {
            EventBody::ModelResponse {
                turn,
                invocation_id,
                rejection,
            }
        }),
        vec(text(), 0..3).prop_map(|steps| EventBody::PlanProposed { steps }),
        vec(text(), 0..3).prop_map(|steps| EventBody::PlanApproved { steps }),
        vec(text(), 0..3).prop_map(|steps| EventBody::PlanModified { steps }),
        option::of(text()).prop_map(|reason| EventBody::PlanRejected { reason }),
        (inv(), vec(matched_rule(), 0..3)).prop_map(|(invocation_id, matched_rules)| EventBody::ApprovalRequested {
            invocation_id,
            matched_rules
        }),
        inv().prop_map(|invocation_id| EventBody::ApprovalGranted { invocation_id }),
        (inv(), option::of(text())).prop_map(|(invocation_id, reason)| EventBody::ApprovalDenied { invocation_id, reason }),
        (inv(), vec(matched_rule(), 0..3), text()).prop_map(|(invocation_id, matched_rules, message)| {
            EventBody::PolicyDenied {
                invocation_id,
                matched_rules,
                message,
            }
        }),
        (inv(), ident(), args()).prop_map(|(invocation_id, tool, args)| EventBody::ToolDispatched {
            invocation_id,
            tool,
            args
        }),
        (inv(), outcome()).prop_map(|(invocation_id, outcome)| EventBody::ToolResult { invocation_id, outcome }),
        (inv(), text(), prop_oneof![Just(Freshness::Fresh), Just(Freshness::Stale), Just(Freshness::Unread)], any::<bool>())
            .prop_map(|(invocation_id, path, freshness, rejected)| EventBody::ReadBeforeEditWarning {
                invocation_id,
                path,
                freshness,
                rejected
            }),
        inv().prop_map(|invocation_id| EventBody::DuplicateResultIgnored { invocation_id }),
        text().prop_map(|reason| EventBody::ClientDisconnected { reason }),
        option::of(inv()).prop_map(|redispatch| EventBody::ClientReconnected { redispatch }),
        text().prop_map(|final_text| EventBody::TaskCompleted { final_text }),
        failure().prop_map(|reason| EventBody::TaskFailed { reason }),
        option::of(text()).prop_map(|reason| EventBody::TaskCancelled { reason }),
    ]
}

fn timestamp() -> impl Strategy<Value = DateTime<Utc>> {
    (0i64..4_000_000_000, 0u32..1_000_000_000).prop_map(|(s, n)| DateTime::from_timestamp(s, n).expect("in range"))
}

pub fn timeline_event() -> impl Strategy<Value = TimelineEvent> {
    (task_id(), 1u64..u64::MAX, timestamp(), event_body()).prop_map(|(task_id, seq, timestamp, body)| TimelineEvent {
        task_id,
        seq,
        timestamp,
        body,
    })
}

/// Any schema-valid message, all thirteen kinds.
pub fn message() -> impl Strategy<Value = Message> {
    let body = prop_oneof![
        (any::<u32>(), text()).prop_map(|(version, client)| MessageBody::Hello(Hello { version, client })),
        Just(MessageBody::BootstrapRequest(BootstrapRequest {})),
        metadata().prop_map(|metadata| MessageBody::BootstrapResult(BootstrapResult { metadata })),
        (ident(), args(), any::<bool>(), option::of("[0-9a-f]{64}")).prop_map(|(tool, args, redispatch, expected_hash)| {
            MessageBody::ToolDispatch(ToolDispatch {
                tool,
                args,
                redispatch,
                expected_hash,
            })
        }),
        outcome().prop_map(|outcome| MessageBody::ToolResult(ToolResult { outcome })),
        (ident(), args(), vec(text(), 0..3)).prop_map(|(tool, args, matched_rules)| {
            MessageBody::ApprovalRequest(ApprovalRequest {
                tool,
                args,
                matched_rules,
            })
        }),
        (prop_oneof![Just(ApprovalVerdict::Approve), Just(ApprovalVerdict::Deny)], option::of(text()))
            .prop_map(|(decision, reason)| MessageBody::ApprovalDecision(ApprovalDecision { decision, reason })),
        vec(text(), 0..4).prop_map(|steps| MessageBody::PlanProposed(PlanProposed { steps })),
        (
            prop_oneof![Just(PlanVerdict::Approved), Just(PlanVerdict::Rejected), Just(PlanVerdict::Modified)],
            option::of(vec(text(), 0..3))
        )
            .prop_map(|(decision, modified_steps)| MessageBody::PlanDecision(PlanDecision {
                decision,
                modified_steps
            })),
        timeline_event().prop_map(|event| MessageBody::TaskUpdate(TaskUpdate { event })),
        (ident(), text()).prop_map(|(code, message)| MessageBody::Error(ErrorBody { code, message })),
        any::<u64>().prop_map(|nonce| MessageBody::Ping(Heartbeat { nonce })),
        any::<u64>().prop_map(|nonce| MessageBody::Pong(Heartbeat { nonce })),
    ];
    (task_id(), inv(), body).prop_map(|(task_id, inv, body)| {
        if body.kind().carries_invocation() {
            Message::for_invocation(task_id, inv, body)
        } else {
            Message::new(task_id, body)
        }
    })
}

#[derive(Debug, Clone)]
pub enum Mutation {
    Truncate(usize),
    FlipByte(usize, u8),
    Insert(usize, u8),
    DeleteRange(usize, usize),
    InsertNewline(usize),
    RenameKey(usize),
    ReplaceValue(usize, Value),
}

pub fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        any::<usize>().prop_map(Mutation::Truncate),
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Mutation::FlipByte(i, b)),
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Mutation::Insert(i, b)),
        (any::<usize>(), 1usize..16).prop_map(|(i, n)| Mutation::DeleteRange(i, n)),
        any::<usize>().prop_map(Mutation::InsertNewline),
        any::<usize>().prop_map(Mutation::RenameKey),
        (any::<usize>(), arg_value()).prop_map(|(i, v)| Mutation::ReplaceValue(i, v)),
    ]
}

/// Applies a mutation to an encoded line. JSON-level mutations edit a field
/// name or value; byte-level ones can break anything.
pub fn apply_mutation(line: &[u8], m: &Mutation) -> Vec<u8> {
    let mut b = line.to_vec();
    let at = |i: usize, len: usize| if len == 0 { 0 } else { i % len };
    match m {
        Mutation::Truncate(i) => b.truncate(at(*i, b.len())),
        Mutation::FlipByte(i, x) => {
            if !b.is_empty() {
                let j = at(*i, b.len());
                b[j] ^= x | 1;
            }
        }
        Mutation::Insert(i, x) => {
            let j = at(*i, b.len() + 1);
            b.insert(j, *x);
        }
        Mutation::DeleteRange(i, n) => {
            let j = at(*i, b.len());
            let end = (j + n).min(b.len());
            b.drain(j..end);
        }
        Mutation::InsertNewline(i) => {
            let j = at(*i, b.len() + 1);
            b.insert(j, b'\n');
        }
        Mutation::RenameKey(i) | Mutation::ReplaceValue(i, _) => {
            let replacement = match m {
                Mutation::ReplaceValue(_, v) => Some(v.clone()),
                _ => None,
            };
            if let Ok(mut v) = serde_json::from_slice::<Value>(&b) {
                let mut keys = Vec::new();
                collect_paths(&v, &mut Vec::new(), &mut keys);
                if !keys.is_empty() {
                    let path = &keys[at(*i, keys.len())];
                    edit_at(&mut v, path, replacement);
                    b = serde_json::to_vec(&v).expect("value serializes");
                    b.push(b'\n');
                }
            }
        }
    }
    b
}

fn collect_paths(v: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    if let Value::Object(m) = v {
        for (k, child) in m {
            prefix.push(k.clone());
            out.push(prefix.clone());
            collect_paths(child, prefix, out);
            prefix.pop();
        }
    }
}

fn edit_at(v: &mut Value, path: &[String], replacement: Option<Value>) {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = v;
    for p in parents {
        cur = cur.get_mut(p).expect("path exists");
    }
    let map = cur.as_object_mut().expect("object parent");
    match replacement {
        Some(new) => {
            map.insert(last.clone(), new);
        }
        None => {
            if let Some(old) = map.remove(last) {
                map.insert(format!("{last}_x"), old);
            }
        }
    }
}

// ---- shell commands and policies ----

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("a.txt".to_string()),
        Just("tmp".to_string()),
        Just("/tmp/x".to_string()),
        Just("-rf".to_string()),
        Just("-f".to_string()),
        Just("--force".to_string()),
        Just("-o".to_string()),
        Just("origin".to_string()),
        Just("'quoted word'".to_string()),
        Just("\"dq $HOME\"".to_string()),
        "[a-z]{1,6}",
    ]
}

fn program() -> impl Strategy<Value = String> {
    proptest::sample::select(vec![
        "rm", "ls", "cat", "grep", "find", "echo", "mv", "cp", "touch", "mkdir", "git push", "git status", "curl",
        "wget", "sudo rm", "env X=1 rm", "bash -c", "python -c", "cargo test", "frobnicate", "sed -i", "xargs rm",
    ])
    .prop_map(String::from)
}

fn segment() -> impl Strategy<Value = String> {
    (program(), vec(word(), 0..4), option::of(prop_oneof![Just("> out.txt"), Just(">> log"), Just("2> /dev/null"), Just("< in")]))
        .prop_map(|(p, ws, redirect)| {
            let mut s = p;
            for w in ws {
                s.push(' ');
                s.push_str(&w);
            }
            if let Some(r) = redirect {
                s.push(' ');
                s.push_str(r);
            }
            s
        })
}

/// Shell commands built from table programs, chain operators and the occasional broken quote.
pub fn command() -> impl Strategy<Value = String> {
    (
        vec((segment(), proptest::sample::select(vec![" ; ", " && ", " || ", " | ", "\n"])), 1..4),
        prop_oneof![9 => Just(""), 1 => Just(" 'unbalanced"), 1 => Just(" $(rm -rf x)")],
    )
        .prop_map(|(segs, tail)| {
            let mut out = String::new();
            for (i, (seg, op)) in segs.iter().enumerate() {
                if i > 0 {
                    out.push_str(op);
                }
                out.push_str(seg);
            }
            out.push_str(tail);
            out
        })
}

pub fn policy() -> impl Strategy<Value = PolicyConfig> {
    (
        btree_map(proptest::sample::select(vec!["read", "edit", "shell"]).prop_map(String::from), rule(), 0..3),
        btree_map(capability(), rule(), 0..4),
        vec(proptest::sample::select(vec!["git push*", "rm *", "curl *", "*sudo*", "cat a.txt"]).prop_map(String::from), 0..2),
        rule(),
    )
        .prop_map(|(tool_rules, capability_rules, command_blocklist, unknown_command_rule)| PolicyConfig {
            tool_rules,
            capability_rules,
            command_blocklist,
            unknown_command_rule,
        })
}

/// A call the engine might see: mostly shell, sometimes read/edit.
pub fn policy_call() -> impl Strategy<Value = ToolCall> {
    prop_oneof![
        6 => command().prop_map(|c| ToolCall::new("shell", [("command".to_string(), Value::from(c))].into())),
        1 => Just(ToolCall::new("read", [("path".to_string(), Value::from("a.txt"))].into())),
        1 => Just(ToolCall::new(
            "edit",
            [
                ("file_name".to_string(), Value::from("a.txt")),
                ("old_string".to_string(), Value::from("x")),
                ("new_string".to_string(), Value::from("y")),
            ]
            .into()
        )),
    ]
}

// ---- edit cases ----

/// A file body and a needle occurring in it exactly once, plus a replacement.
pub fn unique_edit() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<u8>)> {
    (vec(any::<u8>(), 0..200), vec(any::<u8>(), 1..12), vec(any::<u8>(), 0..200), vec(any::<u8>(), 0..20))
        .prop_filter_map("needle must be unique and text-safe", |(pre, needle, post, new)| {
            let to_text = |v: Vec<u8>| String::from_utf8_lossy(&v).into_owned().into_bytes();
            let (pre, needle, post, new) = (to_text(pre), to_text(needle), to_text(post), to_text(new));
            let mut file = pre.clone();
            file.extend_from_slice(&needle);
            file.extend_from_slice(&post);
            (tiller_core::tools::count_occurrences(&file, &needle) == 1).then_some((file, needle, new))
        })
}

/// A file body and an arbitrary needle (any occurrence count).
pub fn any_edit() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    let small = || vec(proptest::sample::select(b"ab\n".to_vec()), 0..40);
    (small(), vec(proptest::sample::select(b"ab\n".to_vec()), 1..4))
}

// ---- scripted sessions ----

#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub mode: Mode,
    pub planning: bool,
    pub policy: u8,
    pub turns: Vec<ModelTurn>,
    pub answers: Vec<Answer>,
}

fn call_turn(tool: &str, pairs: &[(&str, &str)]) -> ModelTurn {
    ModelTurn::tool_call(ToolCall::new(
        tool,
        pairs.iter().map(|(k, v)| (k.to_string(), Value::from(*v))).collect(),
    ))
}

pub fn session_turn() -> impl Strategy<Value = ModelTurn> {
    prop_oneof![
        Just(call_turn("read", &[("path", "a.txt")])),
        Just(call_turn("read", &[("path", "b.txt")])),
        Just(call_turn("read", &[("path", "missing.txt")])),
        Just(call_turn("edit", &[("file_name", "a.txt"), ("old_string", "world"), ("new_string", "there")])),
        Just(call_turn("edit", &[("file_name", "b.txt"), ("old_string", "beta"), ("new_string", "gamma")])),
        Just(call_turn("edit", &[("file_name", "a.txt"), ("old_string", "o"), ("new_string", "0")])),
        Just(call_turn("shell", &[("command", "echo hi")])),
        Just(call_turn("shell", &[("command", "cat a.txt")])),
        Just(call_turn("shell", &[("command", "rm -rf tmp")])),
        Just(call_turn("shell", &[("command", "ls && git push --force")])),
        Just(call_turn("read", &[])),
        Just(call_turn("teleport", &[("to", "mars")])),
        vec("[a-z]{1,8}", 1..4).prop_map(|s| ModelTurn::PlanProposal {
            steps: s.into_iter().map(|x| format!("orig {x}")).collect()
        }),
    ]
}

pub fn answer() -> impl Strategy<Value = Answer> {
    prop_oneof![
        3 => Just(Answer::Approve),
        1 => Just(Answer::Deny("no")),
        2 => Just(Answer::PlanApprove),
        1 => Just(Answer::PlanReject),
        2 => vec("[a-z]{1,8}", 1..3).prop_map(|s| Answer::PlanModify(s.into_iter().map(|x| format!("mod {x}")).collect())),
    ]
}

pub fn session(planning: impl Strategy<Value = bool>) -> impl Strategy<Value = SessionSpec> {
    (
        prop_oneof![Just(Mode::Approval), Just(Mode::Autonomous)],
        planning,
        0u8..4,
        vec(session_turn(), 0..8),
        any::<bool>(),
        vec(answer(), 0..8),
    )
        .prop_map(|(mode, planning, policy, mut turns, finish, answers)| {
            if planning {
                turns.insert(0, ModelTurn::plan(["orig inspect", "orig change"]));
            }
            if finish {
                turns.push(ModelTurn::final_text("done"));
            }
            SessionSpec {
                mode,
                planning,
                policy,
                turns,
                answers,
            }
        })
}

pub fn session_policy(n: u8) -> PolicyConfig {
    let manifest = Manifest::builtin();
    let text = match n {
        0 => "",
        1 => "capability.FsDelete = deny",
        2 => "capability.GitPushForce = deny\nblock rm *",
        _ => "tool.edit = require_approval\nunknown_command = allow",
    };
    tiller_core::safety::parse_policy(text, &manifest).expect("policy parses")
}

/// One rule added to a policy without relaxing anything already there.
#[derive(Debug, Clone)]
pub enum PolicyAddition {
    Tool(String, Rule),
    Capability(Capability, Rule),
    Block(String),
    Unknown(Rule),
}

impl PolicyAddition {
    pub fn apply(&self, p: &PolicyConfig) -> PolicyConfig {
        let mut p = p.clone();
        match self {
            PolicyAddition::Tool(t, r) => {
                let e = p.tool_rules.entry(t.clone()).or_insert(*r);
                *e = (*e).max(*r);
            }
            PolicyAddition::Capability(c, r) => {
                let e = p.capability_rules.entry(*c).or_insert(*r);
                *e = (*e).max(*r);
            }
            PolicyAddition::Block(pat) => p.command_blocklist.push(pat.clone()),
            PolicyAddition::Unknown(r) => p.unknown_command_rule = p.unknown_command_rule.max(*r),
        }
        p
    }
}

pub fn policy_addition() -> impl Strategy<Value = PolicyAddition> {
    prop_oneof![
        (proptest::sample::select(vec!["read", "edit", "shell"]), rule()).prop_map(|(t, r)| PolicyAddition::Tool(t.to_string(), r)),
        (capability(), rule()).prop_map(|(c, r)| PolicyAddition::Capability(c, r)),
        proptest::sample::select(vec!["git push*", "rm *", "curl *", "*sudo*", "ls*", "*"]).prop_map(|p| PolicyAddition::Block(p.to_string())),
        rule().prop_map(PolicyAddition::Unknown),
    ]
}
