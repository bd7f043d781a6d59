use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::process::Command;
use walkdir::WalkDir;

use crate::protocol::BootstrapMetadata;

/// Bounds on what the bootstrap probe collects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapLimits {
    pub max_commits: usize,
    pub max_depth: usize,
    pub max_entries: usize,
    pub probe_timeout: Duration,
    pub excluded_dirs: Vec<String>,
}

impl Default for BootstrapLimits {
    fn default() -> Self {
        Self {
            max_commits: 10,
            max_depth: 3,
            max_entries: 500,
            probe_timeout: Duration::from_secs(5),
            excluded_dirs: [".git", "node_modules", "target", ".venv", "venv", "__pycache__", "vendor", ".tox"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

/// Collects OS, working directory, recent commits and a shallow project tree.
/// Each part degrades to empty on its own.
pub async fn bootstrap_probe(root: &Path, limits: &BootstrapLimits) -> BootstrapMetadata {
    let git = tokio::time::timeout(limits.probe_timeout, git_history(root, limits.max_commits));
    let tree = {
        let root = root.to_path_buf();
        let limits = limits.clone();
        tokio::time::timeout(
            limits.probe_timeout,
            tokio::task::spawn_blocking(move || project_tree(&root, &limits)),
        )
    };
    let (git, tree) = tokio::join!(git, tree);
    BootstrapMetadata {
        os_name: std::env::consts::OS.to_string(),
        working_directory: root.display().to_string(),
        recent_git_history: git.unwrap_or_default(),
        project_structure: tree.ok().and_then(Result::ok).unwrap_or_default(),
    }
}

async fn git_history(root: &Path, max: usize) -> Vec<String> {
    let output = Command::new("git")
        .arg("-C")
        .arg(root)
        .args(["log", "-n", &max.to_string(), "--pretty=format:%h %s"])
        .stdin(std::process::Stdio::null())
        .kill_on_drop(true)
        .output()
        .await;
    match output {
        Ok(o) if o.status.success() => String::from_utf8_lossy(&o.stdout)
            .lines()
            .filter(|l| !l.is_empty())
            .take(max)
            .map(String::from)
            .collect(),
        _ => Vec::new(),
    }
}

/// Relative paths up to `max_depth` components, directories suffixed with `/`.
pub fn project_tree(root: &Path, limits: &BootstrapLimits) -> Vec<String> {
    let excluded = &limits.excluded_dirs;
    WalkDir::new(root)
        .min_depth(1)
        .max_depth(limits.max_depth)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            !(e.file_type().is_dir() && excluded.iter().any(|x| e.file_name().to_string_lossy() == x.as_str()))
        })
        .filter_map(Result::ok)
        .take(limits.max_entries)
        .map(|e| {
            let rel: PathBuf = e.path().strip_prefix(root).unwrap_or(e.path()).to_path_buf();
            let mut s = rel.to_string_lossy().replace('\\', "/");
            if e.file_type().is_dir() {
                s.push('/');
            }
            s
        })
        .collect()
}
