//! Isolated sandbox environments.
//!
//! A [`Sandbox`] is a live handle onto one container: a private root
//! filesystem with a workspace at `/testbed`, a persistent shell session,
//! and a side channel for file transfer. Containers come from a
//! [`ContainerRuntime`]; [`SandboxFleet`] provisions and tracks them.

mod docker;
mod fleet;
mod namespace;
mod runtime;
mod session;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use docker::DockerRuntime;
pub use fleet::{FleetSandbox, SandboxFleet};
pub use namespace::NamespaceRuntime;
pub use runtime::{ContainerRuntime, ExecOutput};
pub use session::{truncation_marker, ExecOutcome, PendingDirective, ShellSession};

/// Default soft timeout for shell commands.
pub const DEFAULT_SOFT_TIMEOUT: Duration = Duration::from_secs(10);
/// Default cap on the bytes of output returned from one command.
pub const DEFAULT_OUTPUT_LIMIT: usize = 64 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("image unavailable: {0}")]
    ImageUnavailable(String),
    #[error("container runtime unreachable: {0}")]
    RuntimeUnreachable(String),
    #[error("resource limit rejected: {0}")]
    ResourceLimitRejected(String),
    #[error("invalid sandbox config: {0}")]
    InvalidConfig(String),
    #[error("sandbox {0} is not running")]
    NotRunning(SandboxId),
    #[error("sandbox {0} is already destroyed")]
    AlreadyDestroyed(SandboxId),
    #[error("path escapes its root: {0}")]
    PathEscape(String),
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("write failed for {path}: {reason}")]
    WriteFailure { path: String, reason: String },
    #[error("a command is still pending; continue or interrupt it first")]
    PendingProcessExists,
    #[error("no pending command to resolve")]
    NoPendingProcess,
    #[error("shell session failure: {0}")]
    Session(String),
    #[error("runtime command failed: {0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Opaque sandbox identity, unique among live handles.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SandboxId(String);

impl SandboxId {
    pub(crate) fn generate() -> Self {
        let raw = uuid::Uuid::new_v4().simple().to_string();
        Self(format!("sbx-{}", &raw[..16]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for SandboxId {
    fn from(value: String) -> Self {
        Self(value)
    }
}

impl fmt::Display for SandboxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Container configuration shared by every task in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    /// Image reference understood by the runtime (`host`, `rootfs:/path`, or an OCI tag).
    pub image: String,
    pub workspace_root: PathBuf,
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub documents_dir: PathBuf,
    pub network_enabled: bool,
    /// Fractional CPU cores; `None` leaves the runtime default.
    pub cpu_limit: Option<f64>,
    pub memory_limit_bytes: u64,
    /// Seconds of inactivity before the fleet reaps the sandbox.
    pub idle_ttl_secs: u64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            image: "host".to_string(),
            workspace_root: PathBuf::from("/testbed"),
            input_dir: PathBuf::from("/testbed/input"),
            output_dir: PathBuf::from("/testbed/output"),
            documents_dir: PathBuf::from("/testbed/documents"),
            network_enabled: true,
            cpu_limit: None,
            memory_limit_bytes: 2 << 30,
            idle_ttl_secs: 1800,
        }
    }
}

impl SandboxConfig {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if self.memory_limit_bytes == 0 {
            return Err(SandboxError::ResourceLimitRejected(
                "memory limit must be positive".into(),
            ));
        }
        if let Some(cpu) = self.cpu_limit {
            if !(cpu.is_finite() && cpu > 0.0) {
                return Err(SandboxError::ResourceLimitRejected(format!(
                    "cpu limit must be a positive number of cores, got {cpu}"
                )));
            }
        }
        if self.image.trim().is_empty() {
            return Err(SandboxError::ImageUnavailable("empty image reference".into()));
        }
        let root = &self.workspace_root;
        if !root.is_absolute() || normalize_absolute(root).as_deref() != Some(root.as_path()) {
            return Err(SandboxError::InvalidConfig(format!(
                "workspace root must be a normalized absolute path: {}",
                root.display()
            )));
        }
        if root == Path::new("/") {
            return Err(SandboxError::InvalidConfig("workspace root cannot be /".into()));
        }
        for (name, dir) in self.designated_dirs() {
            match normalize_absolute(dir) {
                Some(norm) if norm.starts_with(root) => {}
                _ => {
                    return Err(SandboxError::InvalidConfig(format!(
                        "{name} {} must be under {}",
                        dir.display(),
                        root.display()
                    )))
                }
            }
        }
        Ok(())
    }

    pub(crate) fn designated_dirs(&self) -> [(&'static str, &PathBuf); 3] {
        [
            ("input dir", &self.input_dir),
            ("output dir", &self.output_dir),
            ("documents dir", &self.documents_dir),
        ]
    }
}

/// Lexically normalizes an absolute path, returning `None` if it climbs above `/`.
pub fn normalize_absolute(path: &Path) -> Option<PathBuf> {
    if !path.is_absolute() {
        return None;
    }
    let mut out = PathBuf::from("/");
    for component in path.components() {
        match component {
            Component::RootDir => {}
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    return None;
                }
            }
            Component::Normal(part) => out.push(part),
            Component::Prefix(_) => return None,
        }
    }
    Some(out)
}

/// Joins a relative path under `root`, rejecting absolute paths and any `..` segment.
pub fn join_relative(root: &Path, relative: &str) -> Result<PathBuf, SandboxError> {
    let rel = Path::new(relative);
    if relative.is_empty() || rel.is_absolute() {
        return Err(SandboxError::PathEscape(relative.to_string()));
    }
    let mut out = root.to_path_buf();
    for component in rel.components() {
        match component {
            Component::Normal(part) => out.push(part),
            Component::CurDir => {}
            Component::ParentDir | Component::RootDir | Component::Prefix(_) => {
                return Err(SandboxError::PathEscape(relative.to_string()))
            }
        }
    }
    if out == root {
        return Err(SandboxError::PathEscape(relative.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxState {
    Created,
    Running,
    Stopped,
    Destroyed,
}

/// What a path inside the sandbox refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    File,
    Directory,
    Missing,
}

/// State shared between a handle and the fleet that tracks it.
#[derive(Debug)]
pub(crate) struct SandboxShared {
    pub(crate) id: SandboxId,
    pub(crate) state: Mutex<SandboxState>,
    pub(crate) last_active: Mutex<Instant>,
    pub(crate) idle_ttl: Duration,
}

impl SandboxShared {
    fn touch(&self) {
        *self.last_active.lock() = Instant::now();
    }
}

/// A live sandbox. Not `Clone`: one episode drives a handle at a time.
pub struct Sandbox {
    config: SandboxConfig,
    runtime: Arc<dyn ContainerRuntime>,
    shared: Arc<SandboxShared>,
    session: Option<ShellSession>,
}

impl fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sandbox")
            .field("id", &self.shared.id)
            .field("state", &self.state())
            .field("runtime", &self.runtime.name())
            .finish()
    }
}

impl Sandbox {
    pub(crate) async fn start(
        runtime: Arc<dyn ContainerRuntime>,
        config: SandboxConfig,
    ) -> Result<Self, SandboxError> {
        config.validate()?;
        let id = SandboxId::generate();
        let shared = Arc::new(SandboxShared {
            id: id.clone(),
            state: Mutex::new(SandboxState::Created),
            last_active: Mutex::new(Instant::now()),
            idle_ttl: Duration::from_secs(config.idle_ttl_secs),
        });
        runtime.create(&id, &config).await?;
        let mut sandbox = Self { config, runtime, shared, session: None };
        let prepared = sandbox.prepare_workspace().await;
        let session = match prepared {
            Ok(()) => ShellSession::spawn(sandbox.runtime.as_ref(), &id, &sandbox.config).await,
            Err(err) => Err(err),
        };
        match session {
            Ok(session) => {
                sandbox.session = Some(session);
                *sandbox.shared.state.lock() = SandboxState::Running;
                Ok(sandbox)
            }
            Err(err) => {
                let _ = sandbox.runtime.remove(&id).await;
                *sandbox.shared.state.lock() = SandboxState::Destroyed;
                Err(err)
            }
        }
    }

    async fn prepare_workspace(&self) -> Result<(), SandboxError> {
        let mut dirs = vec![self.config.workspace_root.clone()];
        dirs.extend(self.config.designated_dirs().iter().map(|(_, d)| (*d).clone()));
        let mut argv = vec!["mkdir".to_string(), "-p".to_string(), "--".to_string()];
        argv.extend(dirs.iter().map(|d| d.display().to_string()));
        let out = self.runtime.exec(&self.shared.id, &argv, None).await?;
        if !out.success() {
            return Err(SandboxError::Runtime(format!(
                "creating workspace directories failed: {}",
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> &SandboxId {
        &self.shared.id
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn state(&self) -> SandboxState {
        *self.shared.state.lock()
    }

    pub fn runtime_name(&self) -> &str {
        self.runtime.name()
    }

    pub(crate) fn shared(&self) -> &Arc<SandboxShared> {
        &self.shared
    }

    fn ensure_running(&self) -> Result<(), SandboxError> {
        if self.state() != SandboxState::Running {
            return Err(SandboxError::NotRunning(self.shared.id.clone()));
        }
        self.shared.touch();
        Ok(())
    }

    /// True while a soft-timed-out command is still running in the session.
    pub fn has_pending(&self) -> bool {
        self.session.as_ref().is_some_and(ShellSession::has_pending)
    }

    /// Writes files under the workspace root, creating parents. Returns the count written.
    pub async fn put_files<P, B>(&mut self, entries: &[(P, B)]) -> Result<usize, SandboxError>
    where
        P: AsRef<str>,
        B: AsRef<[u8]>,
    {
        self.ensure_running()?;
        let mut targets = Vec::with_capacity(entries.len());
        for (rel, _) in entries {
            targets.push(join_relative(&self.config.workspace_root, rel.as_ref())?);
        }
        for (target, (_, bytes)) in targets.iter().zip(entries) {
            self.write_file(target, bytes.as_ref()).await?;
        }
        Ok(entries.len())
    }

    /// Reads a file by absolute path inside the sandbox, bit-exact.
    pub async fn read_file(&self, path: impl AsRef<Path>) -> Result<Vec<u8>, SandboxError> {
        self.ensure_running()?;
        let path = absolute_arg(path.as_ref())?;
        let script = r#"if [ -f "$1" ]; then exec cat -- "$1"; else exit 44; fi"#;
        let out = self.runtime.exec(&self.shared.id, &sh_argv(script, &[&path]), None).await?;
        match out.status {
            Some(0) => Ok(out.stdout),
            Some(44) => Err(SandboxError::FileNotFound(path)),
            _ => Err(SandboxError::Runtime(format!(
                "reading {path} failed: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            ))),
        }
    }

    /// Writes a file by absolute path, creating parent directories.
    pub async fn write_file(&self, path: impl AsRef<Path>, bytes: &[u8]) -> Result<(), SandboxError> {
        self.ensure_running()?;
        let path = absolute_arg(path.as_ref())?;
        let script = r#"mkdir -p -- "$(dirname -- "$1")" && cat > "$1""#;
        let out = self
            .runtime
            .exec(&self.shared.id, &sh_argv(script, &[&path]), Some(bytes))
            .await?;
        if !out.success() {
            return Err(SandboxError::WriteFailure {
                path,
                reason: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(())
    }

    pub async fn path_kind(&self, path: impl AsRef<Path>) -> Result<PathKind, SandboxError> {
        self.ensure_running()?;
        let path = absolute_arg(path.as_ref())?;
        let script = r#"if [ -d "$1" ]; then echo dir; elif [ -e "$1" ]; then echo file; else echo missing; fi"#;
        let out = self.runtime.exec(&self.shared.id, &sh_argv(script, &[&path]), None).await?;
        match String::from_utf8_lossy(&out.stdout).trim() {
            "dir" => Ok(PathKind::Directory),
            "file" => Ok(PathKind::File),
            "missing" => Ok(PathKind::Missing),
            other => Err(SandboxError::Runtime(format!("unexpected probe output {other:?}"))),
        }
    }

    /// Lists entries under `dir` to `max_depth`, skipping hidden names, as sorted absolute paths.
    /// Directories carry a trailing `/`.
    pub async fn list_tree(
        &self,
        dir: impl AsRef<Path>,
        max_depth: usize,
    ) -> Result<Vec<String>, SandboxError> {
        self.ensure_running()?;
        let path = absolute_arg(dir.as_ref())?;
        let depth = max_depth.to_string();
        let script = r#"cd -- "$1" || exit 44
find . -mindepth 1 -maxdepth "$2" -name '.*' -prune -o \( -type d -printf '%P/\n' \) -o -printf '%P\n'"#;
        let out = self
            .runtime
            .exec(&self.shared.id, &sh_argv(script, &[&path, &depth]), None)
            .await?;
        match out.status {
            Some(0) => {}
            Some(44) => return Err(SandboxError::FileNotFound(path)),
            _ => {
                return Err(SandboxError::Runtime(format!(
                    "listing {path} failed: {}",
                    String::from_utf8_lossy(&out.stderr).trim()
                )))
            }
        }
        let base = path.trim_end_matches('/');
        let mut entries: Vec<String> = String::from_utf8_lossy(&out.stdout)
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| format!("{base}/{l}"))
            .collect();
        entries.sort();
        Ok(entries)
    }

    /// Every regular file under the directory (hidden included) with its bytes, sorted by path.
    pub async fn collect_files(
        &self,
        dir: impl AsRef<Path>,
    ) -> Result<Vec<(String, Vec<u8>)>, SandboxError> {
        self.ensure_running()?;
        let path = absolute_arg(dir.as_ref())?;
        let script = r#"[ -d "$1" ] || exit 0; cd -- "$1" && find . -type f -printf '%P\0'"#;
        let out = self.runtime.exec(&self.shared.id, &sh_argv(script, &[&path]), None).await?;
        let base = path.trim_end_matches('/');
        let mut names: Vec<String> = out
            .stdout
            .split(|b| *b == 0)
            .filter(|s| !s.is_empty())
            .map(|s| format!("{base}/{}", String::from_utf8_lossy(s)))
            .collect();
        names.sort();
        let mut files = Vec::with_capacity(names.len());
        for name in names {
            let bytes = self.read_file(&name).await?;
            files.push((name, bytes));
        }
        Ok(files)
    }

    /// Runs a command in the persistent shell session.
    pub async fn exec_command(
        &mut self,
        command: &str,
        soft_timeout: Duration,
        output_limit: usize,
    ) -> Result<ExecOutcome, SandboxError> {
        self.ensure_running()?;
        let session = self.session_mut()?;
        if session.has_pending() {
            return Err(SandboxError::PendingProcessExists);
        }
        let outcome = session.run(command, soft_timeout, output_limit).await;
        self.recover_session(outcome).await
    }

    /// Continues waiting for, or interrupts, a soft-timed-out command.
    pub async fn resolve_pending(
        &mut self,
        directive: PendingDirective,
        output_limit: usize,
    ) -> Result<ExecOutcome, SandboxError> {
        self.ensure_running()?;
        let runtime = self.runtime.clone();
        let id = self.shared.id.clone();
        let session = self.session_mut()?;
        if !session.has_pending() {
            return Err(SandboxError::NoPendingProcess);
        }
        let outcome = match directive {
            PendingDirective::Continue(extra) => session.wait_more(extra, output_limit).await,
            PendingDirective::Interrupt => session.interrupt(runtime.as_ref(), &id, output_limit).await,
        };
        self.recover_session(outcome).await
    }

    /// Respawns the shell if the previous one died (for example after `exit`).
    async fn recover_session(
        &mut self,
        outcome: Result<ExecOutcome, SandboxError>,
    ) -> Result<ExecOutcome, SandboxError> {
        let dead = self.session.as_ref().map_or(true, ShellSession::is_dead);
        if dead {
            if let Some(old) = self.session.take() {
                old.terminate(self.runtime.as_ref(), &self.shared.id).await;
            }
            let fresh = ShellSession::spawn(self.runtime.as_ref(), &self.shared.id, &self.config).await?;
            self.session = Some(fresh);
        }
        outcome
    }

    fn session_mut(&mut self) -> Result<&mut ShellSession, SandboxError> {
        let id = self.shared.id.clone();
        self.session.as_mut().ok_or(SandboxError::NotRunning(id))
    }

    /// Environment of the shell session as seen by the last completed command.
    pub async fn session_env(&mut self) -> Result<BTreeMap<String, String>, SandboxError> {
        let out = self
            .exec_command("env -0", DEFAULT_SOFT_TIMEOUT, 1 << 20)
            .await?;
        Ok(out
            .output
            .split('\0')
            .filter_map(|kv| kv.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect())
    }

    /// Removes the container and its filesystem.
    pub async fn destroy(&mut self) -> Result<(), SandboxError> {
        {
            let mut state = self.shared.state.lock();
            if *state == SandboxState::Destroyed {
                return Err(SandboxError::AlreadyDestroyed(self.shared.id.clone()));
            }
            *state = SandboxState::Stopped;
        }
        if let Some(session) = self.session.take() {
            session.terminate(self.runtime.as_ref(), &self.shared.id).await;
        }
        let removed = self.runtime.remove(&self.shared.id).await;
        *self.shared.state.lock() = SandboxState::Destroyed;
        removed
    }

    /// Peak memory of the container in bytes, when the runtime can measure it.
    pub async fn peak_memory_bytes(&self) -> Option<u64> {
        self.runtime.peak_memory_bytes(&self.shared.id).await
    }
}

impl Drop for Sandbox {
    fn drop(&mut self) {
        if self.state() == SandboxState::Destroyed {
            return;
        }
        *self.shared.state.lock() = SandboxState::Destroyed;
        let runtime = self.runtime.clone();
        let id = self.shared.id.clone();
        let session = self.session.take();
        if let Ok(handle) = tokio::runtime::Handle::try_current() {
            handle.spawn(async move {
                if let Some(session) = session {
                    session.terminate(runtime.as_ref(), &id).await;
                }
                if let Err(err) = runtime.remove(&id).await {
                    tracing::warn!(sandbox = %id, "cleanup of dropped sandbox failed: {err}");
                }
            });
        } else {
            tracing::warn!(sandbox = %id, "sandbox dropped outside a runtime; container left running");
        }
    }
}

fn absolute_arg(path: &Path) -> Result<String, SandboxError> {
    if !path.is_absolute() {
        return Err(SandboxError::PathEscape(format!(
            "{} is not an absolute path",
            path.display()
        )));
    }
    path.to_str()
        .map(str::to_string)
        .ok_or_else(|| SandboxError::PathEscape(format!("{} is not valid UTF-8", path.display())))
}

fn sh_argv(script: &str, args: &[&str]) -> Vec<String> {
    let mut argv = vec!["sh".to_string(), "-c".to_string(), script.to_string(), "sh".to_string()];
    argv.extend(args.iter().map(|a| a.to_string()));
    argv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let config = SandboxConfig::default();
        config.validate().unwrap();
        assert_eq!(config.workspace_root, Path::new("/testbed"));
        assert_eq!(config.output_dir, Path::new("/testbed/output"));
    }

    #[test]
    fn zero_memory_is_rejected() {
        let config = SandboxConfig { memory_limit_bytes: 0, ..Default::default() };
        assert!(matches!(config.validate(), Err(SandboxError::ResourceLimitRejected(_))));
    }

    #[test]
    fn designated_dirs_must_live_under_workspace() {
        let config = SandboxConfig { output_dir: "/tmp/out".into(), ..Default::default() };
        assert!(matches!(config.validate(), Err(SandboxError::InvalidConfig(_))));
        let config = SandboxConfig { input_dir: "/testbed/../etc".into(), ..Default::default() };
        assert!(matches!(config.validate(), Err(SandboxError::InvalidConfig(_))));
        let config = SandboxConfig { workspace_root: "testbed".into(), ..Default::default() };
        assert!(config.validate().is_err());
    }

    #[test]
    fn relative_join_rejects_traversal() {
        let root = Path::new("/testbed");
        assert_eq!(
            join_relative(root, "documents/intro.txt").unwrap(),
            Path::new("/testbed/documents/intro.txt")
        );
        assert!(matches!(join_relative(root, "../../etc/x"), Err(SandboxError::PathEscape(_))));
        assert!(matches!(join_relative(root, "a/../../b"), Err(SandboxError::PathEscape(_))));
        assert!(matches!(join_relative(root, "/etc/passwd"), Err(SandboxError::PathEscape(_))));
        assert!(matches!(join_relative(root, ""), Err(SandboxError::PathEscape(_))));
        assert!(matches!(join_relative(root, "."), Err(SandboxError::PathEscape(_))));
    }

    #[test]
    fn normalize_handles_dots() {
        assert_eq!(normalize_absolute(Path::new("/a/./b/../c")).unwrap(), Path::new("/a/c"));
        assert!(normalize_absolute(Path::new("/..")).is_none());
        assert!(normalize_absolute(Path::new("a")).is_none());
    }
}
