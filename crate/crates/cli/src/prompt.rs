//! Collecting approval and plan decisions from the developer.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use tiller_core::protocol::{ApprovalRequest, ApprovalVerdict, InvocationId, PlanVerdict};

use crate::render::{render_approval, render_plan};

pub const NON_INTERACTIVE: &str = "non-interactive session";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApprovalAnswer {
    pub verdict: ApprovalVerdict,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanAnswer {
    pub verdict: PlanVerdict,
    pub steps: Option<Vec<String>>,
}

pub trait Prompter: Send {
    fn approve(&mut self, invocation_id: Option<&InvocationId>, req: &ApprovalRequest) -> ApprovalAnswer;
    fn plan(&mut self, steps: &[String]) -> PlanAnswer;
}

/// Used when nobody is at the terminal: destructive calls are denied and plans rejected.
pub struct FailSafe;

impl Prompter for FailSafe {
    fn approve(&mut self, _: Option<&InvocationId>, _: &ApprovalRequest) -> ApprovalAnswer {
        ApprovalAnswer {
            verdict: ApprovalVerdict::Deny,
            reason: Some(NON_INTERACTIVE.into()),
        }
    }

    fn plan(&mut self, _: &[String]) -> PlanAnswer {
        PlanAnswer {
            verdict: PlanVerdict::Rejected,
            steps: None,
        }
    }
}

/// Line-oriented prompts over any reader/writer pair (stdin/stderr in the binary).
pub struct LinePrompter<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead + Send, W: Write + Send> LinePrompter<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }

    fn line(&mut self) -> Option<String> {
        let mut buf = String::new();
        match self.input.read_line(&mut buf) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(buf.trim_end_matches(['\n', '\r']).to_string()),
        }
    }

    fn say(&mut self, text: &str) {
        let _ = self.output.write_all(text.as_bytes());
        let _ = self.output.flush();
    }

    /// `=N` keeps step N, anything else is a new step; an empty line ends the list.
    fn edit_steps(&mut self, steps: &[String]) -> Vec<String> {
        self.say("enter the new step list, one per line (`=N` keeps step N, empty line ends):\n");
        let mut out = Vec::new();
        while let Some(line) = self.line() {
            let line = line.trim();
            if line.is_empty() {
                break;
            }
            match line.strip_prefix('=').and_then(|n| n.trim().parse::<usize>().ok()) {
                Some(n) if (1..=steps.len()).contains(&n) => out.push(steps[n - 1].clone()),
                Some(n) => self.say(&format!("no step {n}; ignored\n")),
                None => out.push(line.to_string()),
            }
        }
        out
    }
}

fn split_answer(line: &str) -> (String, Option<String>) {
    let line = line.trim();
    let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let rest = rest.trim();
    (word.to_ascii_lowercase(), (!rest.is_empty()).then(|| rest.to_string()))
}

impl<R: BufRead + Send, W: Write + Send> Prompter for LinePrompter<R, W> {
    fn approve(&mut self, invocation_id: Option<&InvocationId>, req: &ApprovalRequest) -> ApprovalAnswer {
        self.say(&render_approval(invocation_id, req));
        loop {
            self.say("approve or deny? [a/d] (optionally followed by a reason): ");
            let Some(line) = self.line() else {
                return ApprovalAnswer {
                    verdict: ApprovalVerdict::Deny,
                    reason: Some("no answer".into()),
                };
            };
            let (word, reason) = split_answer(&line);
            let verdict = match word.as_str() {
                "a" | "y" | "yes" | "approve" => ApprovalVerdict::Approve,
                "d" | "n" | "no" | "deny" => ApprovalVerdict::Deny,
                _ => continue,
            };
            return ApprovalAnswer { verdict, reason };
        }
    }

    fn plan(&mut self, steps: &[String]) -> PlanAnswer {
        self.say(&render_plan(steps));
        loop {
            self.say("approve, modify or reject? [a/m/r]: ");
            let Some(line) = self.line() else {
                return PlanAnswer {
                    verdict: PlanVerdict::Rejected,
                    steps: None,
                };
            };
            match split_answer(&line).0.as_str() {
                "a" | "y" | "approve" => {
                    return PlanAnswer {
                        verdict: PlanVerdict::Approved,
                        steps: None,
                    }
                }
                "r" | "n" | "reject" => {
                    return PlanAnswer {
                        verdict: PlanVerdict::Rejected,
                        steps: None,
                    }
                }
                "m" | "modify" => {
                    let edited = self.edit_steps(steps);
                    if edited.is_empty() {
                        self.say("a modified plan needs at least one step\n");
                        continue;
                    }
                    return PlanAnswer {
                        verdict: PlanVerdict::Modified,
                        steps: Some(edited),
                    };
                }
                _ => {}
            }
        }
    }
}

/// A scripted answer for tests and unattended runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Answer {
    Approve,
    Deny(Option<String>),
    PlanApprove,
    PlanReject,
    PlanModify(Vec<String>),
}

/// Plays back answers in order; runs out into the fail-safe answers.
#[derive(Debug, Default)]
pub struct Scripted {
    answers: VecDeque<Answer>,
    pub asked: Vec<String>,
}

impl Scripted {
    pub fn new(answers: impl IntoIterator<Item = Answer>) -> Self {
        Self {
            answers: answers.into_iter().collect(),
            asked: Vec::new(),
        }
    }
}

impl Prompter for Scripted {
    fn approve(&mut self, invocation_id: Option<&InvocationId>, req: &ApprovalRequest) -> ApprovalAnswer {
        self.asked.push(render_approval(invocation_id, req));
        match self.answers.pop_front() {
            Some(Answer::Approve) => ApprovalAnswer {
                verdict: ApprovalVerdict::Approve,
                reason: None,
            },
            Some(Answer::Deny(reason)) => ApprovalAnswer {
                verdict: ApprovalVerdict::Deny,
                reason,
            },
            _ => FailSafe.approve(invocation_id, req),
        }
    }

    fn plan(&mut self, steps: &[String]) -> PlanAnswer {
        self.asked.push(render_plan(steps));
        match self.answers.pop_front() {
            Some(Answer::PlanApprove) => PlanAnswer {
                verdict: PlanVerdict::Approved,
                steps: None,
            },
            Some(Answer::PlanModify(s)) => PlanAnswer {
                verdict: PlanVerdict::Modified,
                steps: Some(s),
            },
            Some(Answer::PlanReject) => PlanAnswer {
                verdict: PlanVerdict::Rejected,
                steps: None,
            },
            _ => FailSafe.plan(steps),
        }
    }
}
