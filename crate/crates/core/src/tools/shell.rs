use std::path::Path;
use std::process::Stdio;
use std::time::Duration;

use tokio::io::{AsyncRead, AsyncReadExt};
use tokio::process::Command;

use super::fs::{capped_text, TRUNCATION_MARKER};
use crate::protocol::{ToolErrorKind, ToolOutcome, ToolPayload};

/// Parameters of a `shell` call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShellSpec {
    pub command: String,
    pub timeout_seconds: u64,
}

impl ShellSpec {
    pub fn new(command: impl Into<String>, timeout_seconds: u64) -> Self {
        Self {
            command: command.into(),
            timeout_seconds,
        }
    }
}

/// Reads a stream to the end, keeping at most `cap` bytes.
async fn capture<R: AsyncRead + Unpin>(mut reader: R, cap: usize) -> (Vec<u8>, usize) {
    let mut kept = Vec::new();
    let mut total = 0usize;
    let mut buf = [0u8; 8192];
    loop {
        match reader.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                total += n;
                let room = cap.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
        }
    }
    (kept, total)
}

fn render_capped(kept: &[u8], total: usize, cap: usize) -> (String, bool) {
    let (mut text, cut) = capped_text(kept, cap);
    if !cut && total > kept.len() {
        text.push_str(TRUNCATION_MARKER);
        return (text, true);
    }
    (text, cut)
}

fn kill_group(pid: u32) {
    // SAFETY: plain syscall on a process group we created; failure (already gone) is fine
    unsafe {
        libc::killpg(pid as libc::pid_t, libc::SIGKILL);
    }
}

/// Runs `sh -c <command>` in `cwd` inside a fresh process group.
///
/// A non-zero exit status is a normal result. On timeout the whole group is
/// killed and the partial output is returned with a `TimedOut` error.
pub async fn tool_shell(cwd: &Path, spec: &ShellSpec, output_cap: usize) -> ToolOutcome {
    if spec.command.trim().is_empty() {
        return ToolOutcome::error(ToolErrorKind::InvalidArguments, "command must not be empty; call shell(command: string)");
    }
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&spec.command)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .kill_on_drop(true);
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            return ToolOutcome::error(ToolErrorKind::SpawnFailed, format!("could not start the command: {e}"))
        }
    };
    let pid = child.id();
    let stdout = tokio::spawn(capture(child.stdout.take().expect("piped"), output_cap));
    let stderr = tokio::spawn(capture(child.stderr.take().expect("piped"), output_cap));

    let timeout = Duration::from_secs(spec.timeout_seconds.max(1));
    let status = tokio::time::timeout(timeout, child.wait()).await;
    let timed_out = status.is_err();
    if timed_out {
        if let Some(pid) = pid {
            kill_group(pid);
        }
        let _ = child.wait().await;
    }

    // a daemonized grandchild may keep the pipes open; don't wait on it forever
    let grace = Duration::from_secs(2);
    let (out, out_total) = tokio::time::timeout(grace, stdout)
        .await
        .ok()
        .and_then(Result::ok)
        .unwrap_or_default();
    let (err, err_total) = tokio::time::timeout(grace, stderr)
        .await
        .ok()
        .and_then(Result::ok)
        .unwrap_or_default();
    let (stdout_text, stdout_truncated) = render_capped(&out, out_total, output_cap);
    let (stderr_text, stderr_truncated) = render_capped(&err, err_total, output_cap);
    let payload = ToolPayload::Shell {
        exit_code: match &status {
            Ok(Ok(s)) => s.code(),
            _ => None,
        },
        stdout: stdout_text,
        stderr: stderr_text,
        stdout_truncated,
        stderr_truncated,
    };
    match status {
        Ok(Ok(_)) => ToolOutcome::ok(payload),
        Ok(Err(e)) => ToolOutcome::Error {
            error_kind: ToolErrorKind::SpawnFailed,
            message: format!("waiting for the command failed: {e}"),
            partial: Some(payload),
        },
        Err(_) => ToolOutcome::Error {
            error_kind: ToolErrorKind::TimedOut,
            message: format!(
                "command timed out after {}s and was killed; partial output follows. Pass a larger timeout_seconds or run something faster.",
                timeout.as_secs()
            ),
            partial: Some(payload),
        },
    }
}
