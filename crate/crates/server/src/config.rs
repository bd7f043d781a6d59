use std::path::PathBuf;
use std::time::Duration;

use tiller_core::maestro::MaestroConfig;
use tiller_core::protocol::Manifest;
use tiller_core::safety::{lint_policy, parse_policy, GapWarning, PolicyConfig, PolicyError};
use tiller_core::state::DEFAULT_SESSION_TTL;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Timelines and sessions live here; in memory when unset.
    pub data_dir: Option<PathBuf>,
    /// Required as `Authorization: Bearer <token>` on every endpoint when set.
    pub token: Option<String>,
    pub policy_dir: Option<PathBuf>,
    pub ping_interval: Duration,
    pub inactivity_timeout: Duration,
    pub session_ttl: Duration,
    pub maestro: MaestroConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            token: None,
            policy_dir: None,
            ping_interval: Duration::from_secs(30),
            inactivity_timeout: Duration::from_secs(20 * 60),
            session_ttl: DEFAULT_SESSION_TTL,
            maestro: MaestroConfig::default(),
        }
    }
}

impl ServerConfig {
    /// How often idle sessions are looked for.
    pub fn sweep_interval(&self) -> Duration {
        (self.inactivity_timeout / 4).clamp(Duration::from_millis(50), Duration::from_secs(30))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyLookupError {
    #[error("invalid policy name `{0}`; use letters, digits, `-` and `_`")]
    BadName(String),
    #[error("unknown policy `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Invalid(#[from] PolicyError),
}

/// Server-administered policies: `--policy NAME` selects `<dir>/NAME.policy`.
pub struct PolicyDir {
    dir: Option<PathBuf>,
}

pub const DEFAULT_POLICY: &str = "default";

impl PolicyDir {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    /// Resolves a policy name. With no name, `default.policy` is used if present, else the empty policy.
    pub fn load(&self, name: Option<&str>, manifest: &Manifest) -> Result<(PolicyConfig, Vec<GapWarning>), PolicyLookupError> {
        let (name, required) = match name {
            Some(n) => (n, true),
            None => (DEFAULT_POLICY, false),
        };
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(PolicyLookupError::BadName(name.to_string()));
        }
        let path = self.dir.as_ref().map(|d| d.join(format!("{name}.policy")));
        match path {
            Some(p) if p.is_file() => {
                let text = std::fs::read_to_string(&p).map_err(|e| PolicyError::Io {
                    path: p.display().to_string(),
                    source: e,
                })?;
                let policy = parse_policy(&text, manifest)?;
                let warnings = lint_policy(&policy);
                Ok((policy, warnings))
            }
            _ if required => Err(PolicyLookupError::Unknown(name.to_string())),
            _ => Ok((PolicyConfig::default(), Vec::new())),
        }
    }
}
