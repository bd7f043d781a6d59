use std::io::{self, Write};
use std::path::{Component, Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::protocol::{ToolErrorKind, ToolOutcome, ToolPayload};

/// Appended to any content cut at a size cap.
pub const TRUNCATION_MARKER: &str = "\n[truncated]";

/// SHA-256 of raw bytes, lowercase hex.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Lexically normalizes a relative tool path so `./a.txt` and `a.txt` agree.
pub fn normalize_path(path: &str) -> String {
    let mut parts: Vec<String> = Vec::new();
    let absolute = path.starts_with('/');
    for comp in Path::new(path).components() {
        match comp {
            Component::CurDir | Component::RootDir | Component::Prefix(_) => {}
            Component::ParentDir => {
                if parts.last().is_some_and(|p| p != "..") {
                    parts.pop();
                } else if !absolute {
                    parts.push("..".into());
                }
            }
            Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
        }
    }
    let joined = parts.join("/");
    if absolute {
        format!("/{joined}")
    } else if joined.is_empty() {
        ".".into()
    } else {
        joined
    }
}

/// Cuts `bytes` to at most `cap` bytes without splitting a UTF-8 sequence.
pub(crate) fn capped_text(bytes: &[u8], cap: usize) -> (String, bool) {
    let mut end = bytes.len().min(cap);
    // don't cut inside a multi-byte sequence (continuation bytes are 0b10xxxxxx)
    while end < bytes.len() && end > 0 && cap - end < 3 && bytes[end] & 0xC0 == 0x80 {
        end -= 1;
    }
    let mut truncated = end < bytes.len();
    let mut text = String::from_utf8_lossy(&bytes[..end]).into_owned();
    // replacement characters can make lossy text longer than its source
    if text.len() > cap {
        let mut cut = cap;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        text.truncate(cut);
        truncated = true;
    }
    if truncated {
        text.push_str(TRUNCATION_MARKER);
    }
    (text, truncated)
}

pub(crate) fn resolve(root: &Path, path: &str) -> PathBuf {
    root.join(path)
}

/// Reads a file, returning its (possibly truncated) text and the digest of all bytes.
pub fn tool_read(root: &Path, path: &str, cap: usize) -> ToolOutcome {
    if path.is_empty() {
        return ToolOutcome::error(ToolErrorKind::InvalidArguments, "path must not be empty; call read(path: string)");
    }
    let full = resolve(root, path);
    let meta = match std::fs::metadata(&full) {
        Ok(m) => m,
        Err(e) => return io_error(path, e),
    };
    if meta.is_dir() {
        return ToolOutcome::error(
            ToolErrorKind::NotAFile,
            format!("{path} is a directory, not a file. Use shell `ls {path}` to list it, then read a file inside it."),
        );
    }
    let bytes = match std::fs::read(&full) {
        Ok(b) => b,
        Err(e) => return io_error(path, e),
    };
    let (content, truncated) = capped_text(&bytes, cap);
    ToolOutcome::ok(ToolPayload::Read {
        path: path.to_string(),
        content,
        hash: content_hash(&bytes),
        truncated,
    })
}

fn io_error(path: &str, e: io::Error) -> ToolOutcome {
    match e.kind() {
        io::ErrorKind::NotFound => ToolOutcome::error(
            ToolErrorKind::NotFound,
            format!("file not found: {path}. Paths are relative to the working directory; list files with shell `ls` to find the right one."),
        ),
        io::ErrorKind::PermissionDenied => ToolOutcome::error(
            ToolErrorKind::PermissionDenied,
            format!("permission denied reading {path}"),
        ),
        _ => ToolOutcome::error(ToolErrorKind::ReadFailed, format!("cannot read {path}: {e}")),
    }
}

/// Parameters of an `edit` call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditSpec {
    pub file_name: String,
    pub old_string: String,
    pub new_string: String,
}

impl EditSpec {
    pub fn new(file_name: impl Into<String>, old_string: impl Into<String>, new_string: impl Into<String>) -> Self {
        Self {
            file_name: file_name.into(),
            old_string: old_string.into(),
            new_string: new_string.into(),
        }
    }
}

/// Number of non-overlapping occurrences of `needle` in `haystack`.
pub fn count_occurrences(haystack: &[u8], needle: &[u8]) -> usize {
    if needle.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut i = 0;
    while i + needle.len() <= haystack.len() {
        if &haystack[i..i + needle.len()] == needle {
            count += 1;
            i += needle.len();
        } else {
            i += 1;
        }
    }
    count
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Replaces the single occurrence of `old_string` with `new_string`.
///
/// The file is rewritten through a temporary file in the same directory and
/// renamed into place. Any error leaves the file untouched. When
/// `expected_hash` is set, the edit is refused if the file no longer matches it.
pub fn tool_edit(root: &Path, spec: &EditSpec, expected_hash: Option<&str>) -> ToolOutcome {
    let name = spec.file_name.as_str();
    if name.is_empty() || spec.old_string.is_empty() {
        return ToolOutcome::error(
            ToolErrorKind::InvalidArguments,
            "file_name and old_string must be non-empty; call edit(file_name, old_string, new_string)",
        );
    }
    let full = resolve(root, name);
    let original = match std::fs::metadata(&full) {
        Ok(m) if m.is_file() => match std::fs::read(&full) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::PermissionDenied => {
                return ToolOutcome::error(ToolErrorKind::PermissionDenied, format!("permission denied reading {name}"))
            }
            Err(e) => return ToolOutcome::error(ToolErrorKind::ReadFailed, format!("cannot read {name}: {e}")),
        },
        Ok(_) => {
            return ToolOutcome::error(
                ToolErrorKind::FileNotFound,
                format!("{name} is not a regular file; edit only changes existing files"),
            )
        }
        Err(_) => {
            return ToolOutcome::error(
                ToolErrorKind::FileNotFound,
                format!("file not found: {name}. edit only changes existing files; check the path with shell `ls`."),
            )
        }
    };
    let pre_hash = content_hash(&original);
    if let Some(expected) = expected_hash {
        if expected != pre_hash {
            return ToolOutcome::error(
                ToolErrorKind::StaleRead,
                format!("{name} changed since you last read it. Read it again and retry the edit with text copied from the new contents."),
            );
        }
    }
    let old = spec.old_string.as_bytes();
    match count_occurrences(&original, old) {
        0 => {
            return ToolOutcome::error(
                ToolErrorKind::OldStringNotFound,
                format!("old_string was not found in {name}. The file may have changed or the text differs in whitespace or indentation. Read {name} again and copy old_string exactly."),
            )
        }
        1 => {}
        n => {
            return ToolOutcome::error(
                ToolErrorKind::AmbiguousMatch { occurrences: n },
                format!("old_string occurs {n} times in {name}. Include more surrounding lines in old_string so it matches exactly once."),
            )
        }
    }
    let at = find(&original, old).expect("counted one occurrence");
    let mut updated = Vec::with_capacity(original.len() - old.len() + spec.new_string.len());
    updated.extend_from_slice(&original[..at]);
    updated.extend_from_slice(spec.new_string.as_bytes());
    updated.extend_from_slice(&original[at + old.len()..]);

    if let Err(e) = write_atomic(&full, &updated) {
        return ToolOutcome::error(ToolErrorKind::WriteFailed, format!("could not write {name}: {e}. The file was not changed."));
    }
    let line = original[..at].iter().filter(|b| **b == b'\n').count() + 1;
    ToolOutcome::ok(ToolPayload::Edit {
        path: name.to_string(),
        summary: format!(
            "edited {name}: replaced 1 occurrence at line {line} ({} bytes -> {} bytes)",
            old.len(),
            spec.new_string.len()
        ),
        pre_hash,
        post_hash: content_hash(&updated),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let perms = std::fs::metadata(path)?.permissions();
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.as_file().set_permissions(perms)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
