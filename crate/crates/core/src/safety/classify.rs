//! Static capability classification of tool calls.
//!
//! Shell commands are split into segments and each segment is mapped by its
//! leading program and flags through a fixed table. The table is
//! conservative: anything it does not recognize is `{Exec, Unknown}`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lexer::{split_segments, RawSegment, RedirectKind};
use crate::protocol::{ToolCall, TOOL_EDIT, TOOL_READ, TOOL_SHELL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Capability {
    FsRead,
    FsWrite,
    FsDelete,
    GitPushForce,
    NetworkWrite,
    Exec,
    Unknown,
}

pub type CapabilitySet = BTreeSet<Capability>;

impl Capability {
    pub const ALL: [Capability; 7] = [
        Capability::FsRead,
        Capability::FsWrite,
        Capability::FsDelete,
        Capability::GitPushForce,
        Capability::NetworkWrite,
        Capability::Exec,
        Capability::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::FsRead => "FsRead",
            Capability::FsWrite => "FsWrite",
            Capability::FsDelete => "FsDelete",
            Capability::GitPushForce => "GitPushForce",
            Capability::NetworkWrite => "NetworkWrite",
            Capability::Exec => "Exec",
            Capability::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Capability {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Capability::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

/// Per-segment view of a shell command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShellSegment {
    /// Words and redirections with quoting removed, single-space separated.
    pub text: String,
    /// `text` with wrapper programs (`sudo`, `env`, `nohup` ...) stripped.
    pub effective_text: String,
    pub capabilities: CapabilitySet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShellAnalysis {
    pub capabilities: CapabilitySet,
    pub segments: Vec<ShellSegment>,
    /// Set when the command could not be tokenized.
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClassifyError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
}

fn unknown() -> CapabilitySet {
    [Capability::Exec, Capability::Unknown].into()
}

/// Capabilities a shell command may exercise: the union over its segments.
pub fn classify_shell(command: &str) -> CapabilitySet {
    analyze_shell(command).capabilities
}

pub fn analyze_shell(command: &str) -> ShellAnalysis {
    let raw = match split_segments(command) {
        Ok(raw) => raw,
        Err(e) => {
            let text = command.split_whitespace().collect::<Vec<_>>().join(" ");
            return ShellAnalysis {
                capabilities: unknown(),
                segments: vec![ShellSegment {
                    effective_text: text.clone(),
                    text,
                    capabilities: unknown(),
                }],
                diagnostic: Some(format!("unparseable command: {}", e.0)),
            };
        }
    };
    let segments: Vec<ShellSegment> = raw.iter().map(classify_segment).collect();
    let mut capabilities: CapabilitySet = segments.iter().flat_map(|s| s.capabilities.iter().copied()).collect();
    if capabilities.is_empty() {
        capabilities = unknown();
    }
    ShellAnalysis {
        capabilities,
        segments,
        diagnostic: None,
    }
}

/// Maps a validated tool call to its capability set.
pub fn classify_tool_call(call: &ToolCall) -> Result<CapabilitySet, ClassifyError> {
    match call.tool.as_str() {
        TOOL_READ => Ok([Capability::FsRead].into()),
        TOOL_EDIT => Ok([Capability::FsWrite].into()),
        TOOL_SHELL => Ok(classify_shell(call.str_arg("command").unwrap_or(""))),
        other => Err(ClassifyError::UnknownTool(other.to_string())),
    }
}

fn classify_segment(seg: &RawSegment) -> ShellSegment {
    let mut caps = CapabilitySet::new();
    for r in &seg.redirects {
        match r.kind {
            RedirectKind::Output if !is_harmless_sink(&r.target) => {
                caps.insert(Capability::FsWrite);
            }
            RedirectKind::Input => {
                caps.insert(Capability::FsRead);
            }
            _ => {}
        }
    }
    if seg.substitution {
        caps.extend(unknown());
    }
    let words = skip_assignments(&seg.words);
    let effective = effective_words(words);
    if !words.is_empty() {
        caps.extend(classify_words(words));
    }
    let mut text_parts: Vec<String> = seg.words.clone();
    text_parts.extend(seg.redirects.iter().map(|r| format!("{} {}", r.op, r.target).trim_end().to_string()));
    ShellSegment {
        text: text_parts.join(" "),
        effective_text: effective.join(" "),
        capabilities: caps,
    }
}

fn is_harmless_sink(target: &str) -> bool {
    matches!(target, "/dev/null" | "/dev/stdout" | "/dev/stderr")
}

fn skip_assignments(words: &[String]) -> &[String] {
    let n = words.iter().take_while(|w| is_assignment(w)).count();
    &words[n..]
}

fn is_assignment(w: &str) -> bool {
    match w.split_once('=') {
        Some((name, _)) => {
            !name.is_empty()
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                && !name.starts_with(|c: char| c.is_ascii_digit())
        }
        None => false,
    }
}

fn program(word: &str) -> &str {
    word.rsplit('/').next().unwrap_or(word)
}

const WRAPPERS: &[&str] = &[
    "sudo", "doas", "env", "nohup", "time", "nice", "ionice", "timeout", "command", "builtin", "exec",
    "stdbuf", "xargs", "watch", "chroot",
];

const INTERPRETERS: &[&str] = &[
    "sh", "bash", "zsh", "dash", "ksh", "fish", "csh", "tcsh", "python", "python2", "python3", "perl",
    "ruby", "node", "deno", "bun", "php", "lua", "awk", "gawk", "eval", "source", ".", "osascript",
    "powershell", "pwsh", "npx", "ssh",
];

const DELETERS: &[&str] = &["rm", "rmdir", "unlink", "shred"];

const WRITERS: &[&str] = &[
    "mv", "cp", "touch", "mkdir", "ln", "chmod", "chown", "chgrp", "tee", "install", "truncate", "dd",
    "rsync", "tar", "unzip", "gunzip", "gzip", "zip", "patch", "mkfifo",
];

const READERS: &[&str] = &[
    "cat", "ls", "grep", "egrep", "fgrep", "rg", "find", "head", "tail", "wc", "less", "more", "stat",
    "file", "diff", "cmp", "sort", "uniq", "tree", "which", "whereis", "type", "du", "df", "pwd", "echo",
    "printf", "true", "false", "test", "[", "basename", "dirname", "realpath", "readlink", "cut", "tr",
    "jq", "date", "whoami", "id", "uname", "nl", "od", "hexdump", "xxd", "md5sum", "sha1sum",
    "sha256sum", "cd", "sleep", "seq", "column", "fold", "rev", "comm", "paste", "join", "expr",
];

/// Build and test runners: they execute project code but are not escapes in themselves.
const RUNNERS: &[&str] = &[
    "cargo", "make", "npm", "yarn", "pnpm", "pytest", "go", "mvn", "gradle", "tsc", "rustc", "gcc",
    "g++", "cc", "clang", "javac", "cmake", "ninja",
];

fn classify_words(words: &[String]) -> CapabilitySet {
    let Some(first) = words.first() else {
        return CapabilitySet::new();
    };
    let head = program(first);
    let args = &words[1..];
    let mut caps = CapabilitySet::new();

    if matches!(head, "{" | "}" | "!") {
        return classify_words(args);
    }
    if WRAPPERS.contains(&head) {
        caps.insert(Capability::Exec);
        caps.extend(classify_words(wrapped_command(head, args)));
        return caps;
    }
    if INTERPRETERS.contains(&head) {
        return unknown();
    }
    if DELETERS.contains(&head) {
        caps.insert(Capability::FsDelete);
        return caps;
    }
    match head {
        "git" => return classify_git(args),
        "curl" => {
            caps.insert(Capability::NetworkWrite);
            let writes_file = args.iter().any(|a| {
                matches!(a.as_str(), "--output" | "--remote-name" | "--remote-name-all")
                    || a.starts_with("--output=")
                    || short_flags(a).is_some_and(|f| f.contains('o') || f.contains('O'))
            });
            if writes_file {
                caps.insert(Capability::FsWrite);
            }
            return caps;
        }
        "wget" => {
            caps.insert(Capability::NetworkWrite);
            let to_stdout = args.windows(2).any(|w| w[0] == "-O" && w[1] == "-")
                || args.iter().any(|a| matches!(a.as_str(), "-O-" | "-qO-" | "--output-document=-"));
            if !to_stdout {
                caps.insert(Capability::FsWrite);
            }
            return caps;
        }
        "scp" => {
            caps.extend([Capability::NetworkWrite, Capability::FsWrite]);
            return caps;
        }
        "sed" => {
            let in_place = args.iter().any(|a| {
                a == "--in-place" || a.starts_with("--in-place=") || short_flags(a).is_some_and(|f| f.starts_with('i'))
            });
            caps.insert(if in_place { Capability::FsWrite } else { Capability::FsRead });
            return caps;
        }
        "find" => return classify_find(args),
        _ => {}
    }
    if WRITERS.contains(&head) {
        caps.insert(Capability::FsWrite);
    } else if READERS.contains(&head) {
        caps.insert(Capability::FsRead);
    } else if RUNNERS.contains(&head) {
        caps.insert(Capability::Exec);
    } else {
        return unknown();
    }
    caps
}

/// The letters of a single-dash flag cluster like `-rf`, if `arg` is one.
fn short_flags(arg: &str) -> Option<&str> {
    arg.strip_prefix('-').filter(|f| !f.is_empty() && !f.starts_with('-'))
}

fn wrapped_command<'a>(wrapper: &str, args: &'a [String]) -> &'a [String] {
    let mut rest = args;
    // leading options (and, for some wrappers, their values)
    while let Some(first) = rest.first() {
        if first == "--" {
            rest = &rest[1..];
            break;
        }
        if !first.starts_with('-') {
            break;
        }
        let takes_value = match wrapper {
            "sudo" => matches!(first.as_str(), "-u" | "-g" | "-C" | "-D" | "-h" | "-p" | "-r" | "-t" | "-U"),
            "nice" => first == "-n",
            "timeout" => matches!(first.as_str(), "-s" | "-k" | "--signal" | "--kill-after"),
            "xargs" => matches!(first.as_str(), "-I" | "-n" | "-P" | "-L" | "-d" | "-E" | "-s" | "-a"),
            "watch" => matches!(first.as_str(), "-n" | "-d"),
            _ => false,
        };
        rest = &rest[if takes_value { 2.min(rest.len()) } else { 1 }..];
    }
    match wrapper {
        "env" => skip_assignments(rest),
        "timeout" => rest.get(1..).unwrap_or(&[]),
        "chroot" => rest.get(1..).unwrap_or(&[]),
        _ => rest,
    }
}

fn effective_words(words: &[String]) -> Vec<String> {
    let mut current = words;
    loop {
        let Some(first) = current.first() else {
            return Vec::new();
        };
        let head = program(first);
        if WRAPPERS.contains(&head) {
            current = wrapped_command(head, &current[1..]);
        } else {
            return current.to_vec();
        }
    }
}

const GIT_READ_ONLY: &[&str] = &[
    "status", "log", "diff", "show", "blame", "grep", "ls-files", "ls-tree", "rev-parse", "describe",
    "shortlog", "cat-file", "rev-list", "whatchanged", "help", "version",
];

fn classify_git(args: &[String]) -> CapabilitySet {
    let mut rest = args;
    while let Some(first) = rest.first() {
        match first.as_str() {
            "-C" | "-c" | "--git-dir" | "--work-tree" | "--namespace" => rest = rest.get(2..).unwrap_or(&[]),
            f if f.starts_with('-') => rest = &rest[1..],
            _ => break,
        }
    }
    let Some(sub) = rest.first() else {
        return [Capability::FsRead].into();
    };
    let sub_args = &rest[1..];
    match sub.as_str() {
        "push" => {
            let forced = sub_args.iter().any(|a| {
                matches!(a.as_str(), "--force" | "--force-if-includes" | "--mirror")
                    || a.starts_with("--force-with-lease")
                    || short_flags(a).is_some_and(|f| f.contains('f'))
                    || (a.starts_with('+') && a.len() > 1)
            });
            if forced {
                [Capability::GitPushForce].into()
            } else {
                [Capability::NetworkWrite].into()
            }
        }
        "clean" | "rm" => [Capability::FsDelete].into(),
        s if GIT_READ_ONLY.contains(&s) => [Capability::FsRead].into(),
        "branch" | "tag" | "remote" | "stash" | "config" if sub_args.iter().all(|a| is_listing_flag(a)) => {
            [Capability::FsRead].into()
        }
        _ => [Capability::FsWrite].into(),
    }
}

fn is_listing_flag(a: &str) -> bool {
    matches!(a, "-v" | "-vv" | "-a" | "--all" | "-l" | "--list" | "-r" | "--get" | "list")
}

fn classify_find(args: &[String]) -> CapabilitySet {
    let mut caps: CapabilitySet = [Capability::FsRead].into();
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "-delete" => {
                caps.insert(Capability::FsDelete);
            }
            "-fprint" | "-fprint0" | "-fprintf" | "-fls" => {
                caps.insert(Capability::FsWrite);
            }
            "-exec" | "-execdir" | "-ok" | "-okdir" => {
                let start = i + 1;
                let end = args[start..]
                    .iter()
                    .position(|a| a == ";" || a == "+")
                    .map_or(args.len(), |p| start + p);
                let inner: Vec<String> = args[start..end].iter().filter(|a| *a != "{}").cloned().collect();
                if inner.is_empty() {
                    caps.extend(unknown());
                } else {
                    caps.extend(classify_words(&inner));
                }
                i = end;
            }
            _ => {}
        }
        i += 1;
    }
    caps
}
